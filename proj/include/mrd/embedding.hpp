#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrd/errors.hpp"
#include "mrd/matrix.hpp"

namespace mrd {

enum class Modality : std::uint8_t { Point = 0, Image = 1, Text = 2 };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Point: return "point";
        case Modality::Image: return "image";
        case Modality::Text: return "text";
    }
    return "?";
}

/// Scales v to unit Euclidean norm.
inline void l2_normalize_inplace(std::span<double> v) {
    double n = norm(v);
    if (n <= 1e-12) throw NearZeroNorm();
    for (auto& x : v) x /= n;
}

inline std::vector<double> l2_normalize(std::vector<double> v) {
    l2_normalize_inplace(v);
    return v;
}

/// One batch of feature rows for a single modality. Rows produced by this
/// codebase are unit norm; rows loaded from float32 files are unit norm to
/// within storage precision.
struct EmbeddingBatch {
    Modality modality = Modality::Point;
    Matrix data;

    EmbeddingBatch() = default;
    EmbeddingBatch(Modality m, Matrix d) : modality(m), data(std::move(d)) {}

    std::size_t n() const { return data.rows; }
    std::size_t d() const { return data.cols; }

    std::span<const double> row(std::size_t i) const { return data.row(i); }
    std::span<double> row(std::size_t i) { return data.row(i); }

    /// Row-norm deviation from 1, maximized over rows.
    double max_norm_error() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < n(); ++i) worst = std::max(worst, std::abs(norm(row(i)) - 1.0));
        return worst;
    }

    void validate(double norm_tol = 1e-6) const {
        if (n() < 1 || d() < 2) throw ShapeMismatch("embedding batch requires N >= 1 and D >= 2");
        if (max_norm_error() > norm_tol)
            throw ShapeMismatch("embedding batch rows are not unit norm");
    }
};

}  // namespace mrd
