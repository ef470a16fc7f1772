#pragma once

#include <stdexcept>
#include <string>

namespace mrd {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct NearZeroNorm : Error {
    explicit NearZeroNorm(const std::string& msg = "vector norm below 1e-12") : Error(msg) {}
};

struct InvalidConfig : Error {
    explicit InvalidConfig(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct BadMagic : Error {
    explicit BadMagic(const std::string& msg = "unrecognized file magic") : Error(msg) {}
};

struct DimMismatch : Error {
    explicit DimMismatch(const std::string& msg) : Error(msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct BatchMismatch : Error {
    explicit BatchMismatch(const std::string& msg) : Error(msg) {}
};

struct FormMismatch : Error {
    explicit FormMismatch(const std::string& msg) : Error(msg) {}
};

struct NonPositiveTau : Error {
    explicit NonPositiveTau(const std::string& msg = "temperature must be > 0") : Error(msg) {}
};

struct NonFiniteLogit : Error {
    explicit NonFiniteLogit(const std::string& msg = "weight logits must be finite") : Error(msg) {}
};

struct EmptyCloud : Error {
    explicit EmptyCloud(const std::string& msg = "point cloud has no points") : Error(msg) {}
};

struct NonFiniteMetric : Error {
    explicit NonFiniteMetric(const std::string& msg = "report contains a non-finite metric") : Error(msg) {}
};

struct KTooLarge : Error {
    explicit KTooLarge(const std::string& msg) : Error(msg) {}
};

}  // namespace mrd
