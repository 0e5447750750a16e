#pragma once

// Volume persistence (<name>.json header + <name>.raw payload), SHA-256
// manifests and PGM/PPM overlays.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cseg/datagen.hpp"
#include "cseg/pipeline.hpp"
#include "cseg/volume.hpp"

namespace cseg {

using AnyVolume = std::variant<HuVolume, ProbVolume, LabelVolume>;

std::string dtype_name(const AnyVolume& v);

// Header for a volume: magic "CSEG", version 1, dims, spacing_mm, dtype
// ("i16", "f32", "u8"), order "x-fastest", endianness "little".
nlohmann::json volume_header(const AnyVolume& v);

// `path` may name the header, the payload or the common stem.
std::string volume_stem(const std::string& path);

// Writes stem.json and stem.raw; returns the two paths.
std::array<std::string, 2> store_volume(const AnyVolume& v, const std::string& path);
AnyVolume load_volume(const std::string& path);

template <typename T>
Volume<T> load_volume_as(const std::string& path) {
    auto any = load_volume(path);
    if (auto* v = std::get_if<Volume<T>>(&any)) return std::move(*v);
    fail(ErrorCode::FormatError, "volume '" + path + "' has dtype " + dtype_name(any) + ", another was expected");
}

// In-memory decoding; every inconsistency is a FormatError naming a byte
// offset in the header text or the payload.
AnyVolume decode_volume(std::string_view header_text, std::span<const char> payload);
std::vector<char> encode_payload(const AnyVolume& v);

std::string sha256_hex(std::span<const char> bytes);
std::string sha256_file(const std::string& path);

// {"files": [{"path", "sha256", "bytes"}...], ...extra}; files are full paths,
// recorded relative to dir.
nlohmann::json make_manifest(const std::string& dir, const std::vector<std::string>& files,
                             const nlohmann::json& extra = nlohmann::json::object());
// Throws FormatError when a listed file is missing or its hash differs.
void verify_manifest(const std::string& dir, const nlohmann::json& manifest);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);
void write_text(const std::string& path, std::string_view text);

// Corpus layout: dir/<id>/{ct,gt,boundary}.{json,raw} plus dir/manifest.json
// holding the case ids and file hashes. Returns the manifest.
nlohmann::json store_corpus(const std::string& dir, const std::vector<Case>& cases,
                            const nlohmann::json& extra = nlohmann::json::object());
Case load_case(const std::string& case_dir, const std::string& id);
// Verifies the manifest hashes before loading.
std::vector<Case> load_corpus(const std::string& dir);

// {"lo": [x,y,z], "hi": [x,y,z], "source": s}; FormatError when malformed,
// InvalidArgument when the box does not fit dims.
nlohmann::json box_to_json(const BBox3& box);
BBox3 box_from_json(const nlohmann::json& j, const Dims& dims);

// Model bundle: <dir>/stage1/{axial,coronal,sagittal}.cshn and
// <dir>/stage2/{axial,coronal,sagittal,boundary}.cshn, rf.csfr and
// thresholds.json. Returns the written paths.
std::string stage1_net_path(const std::string& dir, ViewPlane plane);
std::string stage2_net_path(const std::string& dir, ViewPlane plane);
std::string boundary_net_path(const std::string& dir);
std::vector<std::string> save_stage1(const std::string& dir, const PipelineConfig& cfg, const Stage1Models& m);
std::vector<std::string> save_stage2(const std::string& dir, const PipelineConfig& cfg, const Stage2Models& m);
std::vector<std::string> save_aggregation(const std::string& dir, const Stage2Models& m);
Stage1Models load_stage1(const std::string& dir);
// With `with_aggregation` false only the nets are read.
Stage2Models load_stage2(const std::string& dir, bool with_aggregation = true);

// Grey CT slice with the gt contour in red and the prediction contour in
// green (yellow where they coincide). Axial slice z.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;
};
RgbImage overlay_slice(const LabelVolume& ct_window, const LabelVolume* gt, const LabelVolume* pred, int z);
void write_ppm(const std::string& path, const RgbImage& img);
void write_pgm(const std::string& path, const Image<std::uint8_t>& img);

}  // namespace cseg
