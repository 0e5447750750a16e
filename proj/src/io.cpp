#include "cseg/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <openssl/evp.h>

#include "cseg/binary_io.hpp"
#include "cseg/forest.hpp"
#include "cseg/hnn.hpp"

namespace cseg {

namespace fs = std::filesystem;

namespace {

template <typename T>
constexpr const char* kDtype = "";
template <>
constexpr const char* kDtype<std::int16_t> = "i16";
template <>
constexpr const char* kDtype<float> = "f32";
template <>
constexpr const char* kDtype<std::uint8_t> = "u8";

[[noreturn]] void header_error(std::string_view text, std::string_view key, const std::string& what) {
    // Point at the key when it occurs in the text, else at the start.
    const auto at = text.find("\"" + std::string(key) + "\"");
    fail(ErrorCode::FormatError, "volume header: " + what + " at byte " +
                                     std::to_string(at == std::string_view::npos ? 0 : at));
}

template <typename T>
Volume<T> decode_payload(const Dims& d, const Spacing& s, std::span<const char> payload) {
    const auto expected = voxel_count(d) * sizeof(T);
    if (payload.size() != expected)
        fail(ErrorCode::FormatError, "volume payload has " + std::to_string(payload.size()) + " bytes, expected " +
                                         std::to_string(expected) + " (mismatch at byte " +
                                         std::to_string(std::min(payload.size(), expected)) + ")");
    std::vector<T> data(voxel_count(d));
    std::memcpy(data.data(), payload.data(), expected);
    if constexpr (std::is_same_v<T, float>) {
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                fail(ErrorCode::FormatError, "non-finite f32 voxel at payload byte " + std::to_string(i * sizeof(T)));
    }
    return Volume<T>(d, s, std::move(data));
}

}  // namespace

std::string dtype_name(const AnyVolume& v) {
    return std::visit([](const auto& vol) { return std::string(kDtype<typename std::decay_t<decltype(vol)>::value_type>); }, v);
}

nlohmann::json volume_header(const AnyVolume& v) {
    return std::visit(
        [](const auto& vol) {
            const auto& d = vol.dims();
            const auto& s = vol.spacing();
            nlohmann::json j;
            j["magic"] = "CSEG";
            j["version"] = 1;
            j["dims"] = {d.x, d.y, d.z};
            j["spacing_mm"] = {s.x, s.y, s.z};
            j["dtype"] = kDtype<typename std::decay_t<decltype(vol)>::value_type>;
            j["order"] = "x-fastest";
            j["endianness"] = "little";
            return j;
        },
        v);
}

std::string volume_stem(const std::string& path) {
    fs::path p(path);
    if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
    return p.string();
}

std::vector<char> encode_payload(const AnyVolume& v) {
    return std::visit(
        [](const auto& vol) {
            using T = typename std::decay_t<decltype(vol)>::value_type;
            std::vector<char> out(vol.size() * sizeof(T));
            std::memcpy(out.data(), vol.data().data(), out.size());
            return out;
        },
        v);
}

std::array<std::string, 2> store_volume(const AnyVolume& v, const std::string& path) {
    const auto stem = volume_stem(path);
    const std::string header = stem + ".json", raw = stem + ".raw";
    write_file_bytes(raw, encode_payload(v));
    write_text(header, volume_header(v).dump(2) + "\n");
    return {header, raw};
}

AnyVolume decode_volume(std::string_view text, std::span<const char> payload) {
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::FormatError, "volume header is not valid JSON at byte " + std::to_string(e.byte));
    }
    if (!h.is_object()) header_error(text, "", "not a JSON object");
    auto field = [&](const char* key) -> const nlohmann::json& {
        if (!h.contains(key)) header_error(text, key, std::string("missing field '") + key + "'");
        return h.at(key);
    };
    const auto& magic = field("magic");
    if (!magic.is_string() || magic.get<std::string>() != "CSEG") header_error(text, "magic", "bad magic");
    const auto& version = field("version");
    if (!version.is_number_integer() || version.get<long long>() != 1) header_error(text, "version", "unsupported version");
    const auto& order = field("order");
    if (!order.is_string() || order.get<std::string>() != "x-fastest") header_error(text, "order", "unsupported order");
    const auto& endian = field("endianness");
    if (!endian.is_string() || endian.get<std::string>() != "little")
        header_error(text, "endianness", "unsupported endianness");

    const auto& dims = field("dims");
    if (!dims.is_array() || dims.size() != 3) header_error(text, "dims", "dims must be three integers");
    Dims d;
    for (int a = 0; a < 3; ++a) {
        const auto& e = dims[static_cast<std::size_t>(a)];
        if (!e.is_number_integer()) header_error(text, "dims", "dims must be three integers");
        const auto v = e.get<long long>();
        if (v < 1 || v > 65535) header_error(text, "dims", "dims must be in [1, 65535]");
        d[a] = static_cast<int>(v);
    }
    if (voxel_count(d) > (std::size_t{1} << 31)) header_error(text, "dims", "volume too large");

    const auto& sp = field("spacing_mm");
    if (!sp.is_array() || sp.size() != 3) header_error(text, "spacing_mm", "spacing_mm must be three numbers");
    double sv[3];
    for (int a = 0; a < 3; ++a) {
        const auto& e = sp[static_cast<std::size_t>(a)];
        if (!e.is_number()) header_error(text, "spacing_mm", "spacing_mm must be three numbers");
        sv[a] = e.get<double>();
        if (!std::isfinite(sv[a]) || sv[a] <= 0) header_error(text, "spacing_mm", "spacing must be finite and > 0");
    }
    const Spacing s{sv[0], sv[1], sv[2]};

    const auto& dt = field("dtype");
    if (!dt.is_string()) header_error(text, "dtype", "dtype must be a string");
    const auto dtype = dt.get<std::string>();
    if (dtype == "i16") return decode_payload<std::int16_t>(d, s, payload);
    if (dtype == "f32") return decode_payload<float>(d, s, payload);
    if (dtype == "u8") return decode_payload<std::uint8_t>(d, s, payload);
    header_error(text, "dtype", "unknown dtype '" + dtype + "'");
}

AnyVolume load_volume(const std::string& path) {
    const auto stem = volume_stem(path);
    const auto header = read_file_bytes(stem + ".json");
    const auto payload = read_file_bytes(stem + ".raw");
    try {
        return decode_volume(std::string_view(header.data(), header.size()), payload);
    } catch (const Error& e) {
        throw Error(e.code(), std::string(e.what()) + " ('" + stem + "')");
    }
}

std::string sha256_hex(std::span<const char> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorCode::NumericFailure, "SHA-256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

nlohmann::json make_manifest(const std::string& dir, const std::vector<std::string>& files,
                             const nlohmann::json& extra) {
    nlohmann::json m = extra;
    auto list = nlohmann::json::array();
    for (const auto& f : files) {
        const auto bytes = read_file_bytes(f);
        list.push_back({{"path", fs::relative(f, dir).generic_string()},
                        {"sha256", sha256_hex(bytes)},
                        {"bytes", bytes.size()}});
    }
    m["files"] = list;
    return m;
}

void verify_manifest(const std::string& dir, const nlohmann::json& manifest) {
    if (!manifest.is_object() || !manifest.contains("files") || !manifest["files"].is_array())
        fail(ErrorCode::FormatError, "manifest in '" + dir + "' has no file list");
    for (const auto& f : manifest["files"]) {
        if (!f.is_object() || !f.contains("path") || !f["path"].is_string() || !f.contains("sha256") ||
            !f["sha256"].is_string())
            fail(ErrorCode::FormatError, "malformed manifest entry in '" + dir + "'");
        const auto path = (fs::path(dir) / f["path"].get<std::string>()).string();
        if (!fs::exists(path)) fail(ErrorCode::FormatError, "manifest lists missing file '" + path + "'");
        if (sha256_file(path) != f["sha256"].get<std::string>())
            fail(ErrorCode::FormatError, "hash mismatch for '" + path + "'");
    }
}

nlohmann::json store_corpus(const std::string& dir, const std::vector<Case>& cases, const nlohmann::json& extra) {
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto ids = nlohmann::json::array();
    for (const auto& c : cases) {
        const auto cdir = fs::path(dir) / c.id;
        fs::create_directories(cdir);
        for (const auto& p : store_volume(c.ct, (cdir / "ct").string())) files.push_back(p);
        for (const auto& p : store_volume(c.gt_interior, (cdir / "gt").string())) files.push_back(p);
        for (const auto& p : store_volume(c.gt_boundary, (cdir / "boundary").string())) files.push_back(p);
        ids.push_back(c.id);
    }
    auto meta = extra;
    meta["cases"] = ids;
    const auto manifest = make_manifest(dir, files, meta);
    write_json((fs::path(dir) / "manifest.json").string(), manifest);
    return manifest;
}

Case load_case(const std::string& case_dir, const std::string& id) {
    const fs::path d(case_dir);
    Case c;
    c.id = id;
    c.ct = load_volume_as<std::int16_t>((d / "ct").string());
    c.gt_interior = load_volume_as<std::uint8_t>((d / "gt").string());
    c.gt_boundary = load_volume_as<std::uint8_t>((d / "boundary").string());
    require(c.gt_interior.dims() == c.ct.dims() && c.gt_boundary.dims() == c.ct.dims(),
            "case '" + id + "' has masks whose dims differ from the CT");
    return c;
}

std::vector<Case> load_corpus(const std::string& dir) {
    const auto manifest = read_json((fs::path(dir) / "manifest.json").string());
    verify_manifest(dir, manifest);
    if (!manifest.contains("cases") || !manifest["cases"].is_array())
        fail(ErrorCode::FormatError, "manifest in '" + dir + "' has no case list");
    std::vector<Case> cases;
    for (const auto& id : manifest["cases"]) {
        if (!id.is_string()) fail(ErrorCode::FormatError, "case ids must be strings");
        cases.push_back(load_case((fs::path(dir) / id.get<std::string>()).string(), id.get<std::string>()));
    }
    return cases;
}

void write_text(const std::string& path, std::string_view text) {
    write_file_bytes(path, std::vector<char>(text.begin(), text.end()));
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::FormatError, "'" + path + "' is not valid JSON at byte " + std::to_string(e.byte));
    }
}

nlohmann::json box_to_json(const BBox3& box) {
    return {{"lo", {box.lo.x, box.lo.y, box.lo.z}}, {"hi", {box.hi.x, box.hi.y, box.hi.z}}, {"source", box.source}};
}

BBox3 box_from_json(const nlohmann::json& j, const Dims& dims) {
    auto corner = [&](const char* key) {
        if (!j.is_object() || !j.contains(key) || !j[key].is_array() || j[key].size() != 3)
            fail(ErrorCode::FormatError, std::string("box needs a three-element '") + key + "'");
        Index3 p;
        for (int a = 0; a < 3; ++a) {
            const auto& e = j[key][static_cast<std::size_t>(a)];
            if (!e.is_number_integer()) fail(ErrorCode::FormatError, std::string("box '") + key + "' must hold integers");
            const auto v = e.get<long long>();
            if (v < -65536 || v > 65536) fail(ErrorCode::FormatError, std::string("box '") + key + "' out of range");
            p[a] = static_cast<int>(v);
        }
        return p;
    };
    const auto lo = corner("lo"), hi = corner("hi");
    std::string source = "file";
    if (j.contains("source") && j["source"].is_string()) source = j["source"].get<std::string>();
    return make_bbox(lo, hi, dims, source);
}

namespace {

std::string plane_file(const std::string& dir, const char* stage, const std::string& name) {
    return (fs::path(dir) / stage / (name + ".cshn")).string();
}

void ensure_parent(const std::string& path) { fs::create_directories(fs::path(path).parent_path()); }

}  // namespace

std::string stage1_net_path(const std::string& dir, ViewPlane plane) { return plane_file(dir, "stage1", to_string(plane)); }
std::string stage2_net_path(const std::string& dir, ViewPlane plane) { return plane_file(dir, "stage2", to_string(plane)); }
std::string boundary_net_path(const std::string& dir) { return plane_file(dir, "stage2", "boundary"); }

std::vector<std::string> save_stage1(const std::string& dir, const PipelineConfig& cfg, const Stage1Models& m) {
    std::vector<std::string> out;
    for (auto plane : kAllPlanes) {
        const auto path = stage1_net_path(dir, plane);
        ensure_parent(path);
        hnn::save_checkpoint(path, cfg.stage1_net, m.interior[static_cast<std::size_t>(plane)]);
        out.push_back(path);
    }
    return out;
}

std::vector<std::string> save_aggregation(const std::string& dir, const Stage2Models& m) {
    const auto rf = (fs::path(dir) / "stage2" / "rf.csfr").string();
    const auto thr = (fs::path(dir) / "stage2" / "thresholds.json").string();
    ensure_parent(rf);
    forest::save_forest(rf, m.rf);
    write_json(thr, {{"rf_threshold", m.rf_threshold}, {"pooled_threshold", m.pooled_threshold}});
    return {rf, thr};
}

std::vector<std::string> save_stage2(const std::string& dir, const PipelineConfig& cfg, const Stage2Models& m) {
    std::vector<std::string> out;
    for (auto plane : kAllPlanes) {
        const auto path = stage2_net_path(dir, plane);
        ensure_parent(path);
        hnn::save_checkpoint(path, cfg.stage2_net, m.interior[static_cast<std::size_t>(plane)]);
        out.push_back(path);
    }
    hnn::save_checkpoint(boundary_net_path(dir), cfg.boundary_net, m.boundary);
    out.push_back(boundary_net_path(dir));
    for (const auto& p : save_aggregation(dir, m)) out.push_back(p);
    return out;
}

Stage1Models load_stage1(const std::string& dir) {
    Stage1Models m;
    for (auto plane : kAllPlanes)
        m.interior[static_cast<std::size_t>(plane)] = hnn::load_checkpoint(stage1_net_path(dir, plane)).params;
    return m;
}

Stage2Models load_stage2(const std::string& dir, bool with_aggregation) {
    Stage2Models m;
    for (auto plane : kAllPlanes)
        m.interior[static_cast<std::size_t>(plane)] = hnn::load_checkpoint(stage2_net_path(dir, plane)).params;
    m.boundary = hnn::load_checkpoint(boundary_net_path(dir)).params;
    if (!with_aggregation) return m;
    m.rf = forest::load_forest((fs::path(dir) / "stage2" / "rf.csfr").string());
    const auto thr = read_json((fs::path(dir) / "stage2" / "thresholds.json").string());
    try {
        m.rf_threshold = thr.at("rf_threshold").get<double>();
        m.pooled_threshold = thr.at("pooled_threshold").get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::FormatError, "thresholds.json in '" + dir + "' is malformed: " + e.what());
    }
    for (const auto& mode : PoolingMode::all())
        if (!m.pooled_threshold.count(mode.name()))
            fail(ErrorCode::FormatError, "thresholds.json lacks the '" + mode.name() + "' threshold");
    return m;
}

RgbImage overlay_slice(const LabelVolume& ct, const LabelVolume* gt, const LabelVolume* pred, int z) {
    const auto& d = ct.dims();
    require(z >= 0 && z < d.z, "overlay slice outside the volume");
    for (const auto* m : {gt, pred}) require(!m || m->dims() == d, "overlay masks must match the CT dims");
    auto contour = [&](const LabelVolume* m, int x, int y) {
        if (!m || !(*m)(x, y, z)) return false;
        return x == 0 || y == 0 || x == d.x - 1 || y == d.y - 1 || !(*m)(x - 1, y, z) || !(*m)(x + 1, y, z) ||
               !(*m)(x, y - 1, z) || !(*m)(x, y + 1, z);
    };
    RgbImage img{d.x, d.y, std::vector<std::uint8_t>(static_cast<std::size_t>(d.x) * d.y * 3)};
    for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
            auto* px = &img.rgb[(static_cast<std::size_t>(y) * d.x + x) * 3];
            const auto g = ct(x, y, z);
            px[0] = px[1] = px[2] = g;
            const bool a = contour(gt, x, y), b = contour(pred, x, y);
            if (a || b) {
                px[0] = a ? 255 : 0;
                px[1] = b ? 255 : 0;
                px[2] = 0;
            }
        }
    return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
    std::string head = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<char> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
    write_file_bytes(path, bytes);
}

void write_pgm(const std::string& path, const Image<std::uint8_t>& img) {
    std::string head = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<char> bytes(head.begin(), head.end());
    bytes.insert(bytes.end(), img.data.begin(), img.data.end());
    write_file_bytes(path, bytes);
}

}  // namespace cseg
