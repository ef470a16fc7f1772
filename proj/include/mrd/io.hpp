#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/synth.hpp"

namespace mrd {

static_assert(std::endian::native == std::endian::little, "file formats are little-endian");

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed");
}

template <typename T>
inline void write_pod(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

template <typename T>
inline T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("unexpected end of file");
    return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    return in;
}

inline std::uint64_t remaining_bytes(std::ifstream& in) {
    const auto pos = in.tellg();
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(pos);
    return static_cast<std::uint64_t>(end - pos);
}

}  // namespace detail

/// Embedding file: magic "MRDE", version u32=1, modality u8, 3 reserved
/// zero bytes, n u64, d u64, then n*d float32 row-major.
inline void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path) {
    batch.validate(1e-5);
    auto out = detail::open_out(path);
    detail::write_bytes(out, "MRDE", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(batch.modality));
    const std::uint8_t reserved[3] = {0, 0, 0};
    detail::write_bytes(out, reserved, 3);
    detail::write_pod<std::uint64_t>(out, batch.n());
    detail::write_pod<std::uint64_t>(out, batch.d());
    for (double v : batch.data.data) detail::write_pod<float>(out, static_cast<float>(v));
}

inline EmbeddingBatch load_embeddings(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MRDE", 4) != 0) throw BadMagic();
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1) throw BadMagic("unsupported embedding file version");
    const auto modality = detail::read_pod<std::uint8_t>(in);
    if (modality > 2) throw BadMagic("unknown modality byte");
    detail::read_pod<std::uint8_t>(in);
    detail::read_pod<std::uint8_t>(in);
    detail::read_pod<std::uint8_t>(in);
    const auto n = detail::read_pod<std::uint64_t>(in);
    const auto d = detail::read_pod<std::uint64_t>(in);
    if (detail::remaining_bytes(in) != n * d * sizeof(float))
        throw DimMismatch("payload length does not match header n*d");
    EmbeddingBatch batch(static_cast<Modality>(modality), Matrix(n, d));
    for (auto& v : batch.data.data) v = detail::read_pod<float>(in);
    return batch;
}

/// Cloud file: magic "MRDP", version u32=1, n u64, points u64, then
/// n*points*3 float32.
inline void save_clouds(const std::vector<Matrix>& clouds, const std::filesystem::path& path) {
    auto out = detail::open_out(path);
    detail::write_bytes(out, "MRDP", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint64_t>(out, clouds.size());
    const std::uint64_t points = clouds.empty() ? 0 : clouds.front().rows;
    detail::write_pod<std::uint64_t>(out, points);
    for (const auto& cloud : clouds) {
        if (cloud.rows != points || cloud.cols != 3)
            throw ShapeMismatch("all clouds must be points x 3");
        for (double v : cloud.data) detail::write_pod<float>(out, static_cast<float>(v));
    }
}

inline std::vector<Matrix> load_clouds(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MRDP", 4) != 0) throw BadMagic();
    if (detail::read_pod<std::uint32_t>(in) != 1) throw BadMagic("unsupported cloud file version");
    const auto n = detail::read_pod<std::uint64_t>(in);
    const auto points = detail::read_pod<std::uint64_t>(in);
    if (detail::remaining_bytes(in) != n * points * 3 * sizeof(float))
        throw DimMismatch("payload length does not match header");
    std::vector<Matrix> clouds;
    clouds.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Matrix cloud(points, 3);
        for (auto& v : cloud.data) v = detail::read_pod<float>(in);
        clouds.push_back(std::move(cloud));
    }
    return clouds;
}

inline nlohmann::json synth_config_to_json(const SynthConfig& cfg) {
    return {{"n_categories", cfg.n_categories},
            {"samples_per_category", cfg.samples_per_category},
            {"d", cfg.d},
            {"points_per_cloud", cfg.points_per_cloud},
            {"sigma_image", cfg.sigma_image},
            {"sigma_text", cfg.sigma_text},
            {"gap_magnitude", cfg.gap_magnitude},
            {"seed", cfg.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    cfg.n_categories = j.at("n_categories").get<std::size_t>();
    cfg.samples_per_category = j.at("samples_per_category").get<std::size_t>();
    cfg.d = j.at("d").get<std::size_t>();
    cfg.points_per_cloud = j.at("points_per_cloud").get<std::size_t>();
    cfg.sigma_image = j.at("sigma_image").get<double>();
    cfg.sigma_text = j.at("sigma_text").get<double>();
    cfg.gap_magnitude = j.at("gap_magnitude").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

/// Writes the four binary files plus manifest.json into `dir`. The manifest
/// records relative file paths, the labels array, category names, and the
/// generating config.
inline std::filesystem::path save_dataset(const TripletDataset& ds, const SynthConfig& cfg,
                                          const std::filesystem::path& dir,
                                          const std::string& manifest_name = "manifest.json") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    save_embeddings(ds.image_emb, dir / "image_emb.mrde");
    save_embeddings(ds.text_emb, dir / "text_emb.mrde");
    save_embeddings(EmbeddingBatch(Modality::Text, ds.class_text_emb), dir / "class_text_emb.mrde");
    save_clouds(ds.clouds, dir / "clouds.mrdp");

    nlohmann::json manifest;
    manifest["config"] = synth_config_to_json(cfg);
    manifest["files"] = {{"image_emb", "image_emb.mrde"},
                         {"text_emb", "text_emb.mrde"},
                         {"class_text_emb", "class_text_emb.mrde"},
                         {"clouds", "clouds.mrdp"}};
    manifest["labels"] = ds.labels;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < ds.n_categories(); ++c) names.push_back("cat_" + std::to_string(c));
    manifest["category_names"] = names;

    const auto path = dir / manifest_name;
    auto out = detail::open_out(path);
    const std::string text = manifest.dump(2);
    detail::write_bytes(out, text.data(), text.size());
    detail::write_pod<char>(out, '\n');
    return path;
}

struct LoadedDataset {
    TripletDataset dataset;
    SynthConfig config;
    std::vector<std::string> category_names;
};

inline LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
    auto in = detail::open_in(manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad manifest: ") + e.what());
    }
    const auto dir = manifest_path.parent_path();
    LoadedDataset out;
    try {
        out.config = synth_config_from_json(manifest.at("config"));
        const auto& files = manifest.at("files");
        out.dataset.image_emb = load_embeddings(dir / files.at("image_emb").get<std::string>());
        out.dataset.text_emb = load_embeddings(dir / files.at("text_emb").get<std::string>());
        out.dataset.class_text_emb =
            load_embeddings(dir / files.at("class_text_emb").get<std::string>()).data;
        out.dataset.clouds = load_clouds(dir / files.at("clouds").get<std::string>());
        out.dataset.labels = manifest.at("labels").get<std::vector<std::size_t>>();
        out.category_names = manifest.at("category_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad manifest: ") + e.what());
    }
    out.dataset.validate();
    return out;
}

}  // namespace mrd
