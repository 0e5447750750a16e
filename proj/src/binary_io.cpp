#include "cseg/binary_io.hpp"

#include <cmath>
#include <iterator>

namespace cseg {

void BinaryWriter::save(const std::string& path) const { write_file_bytes(path, buf_); }

std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::FormatError, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::InvalidArgument, "cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::InvalidArgument, "write failed for '" + path + "'");
}

BinaryReader BinaryReader::from_file(const std::string& path) { return BinaryReader(read_file_bytes(path)); }

float BinaryReader::get_finite_f32(const char* what) {
    const auto at = pos_;
    const float v = get<float>();
    if (!std::isfinite(v))
        fail(ErrorCode::FormatError, std::string("non-finite ") + what + " at byte " + std::to_string(at));
    return v;
}

void BinaryReader::expect_tag(const char (&magic)[5]) {
    char got[4];
    read(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
        fail(ErrorCode::FormatError, std::string("bad magic at byte ") + std::to_string(pos_ - 4) +
                                         ", expected '" + magic + "'");
}

}  // namespace cseg
