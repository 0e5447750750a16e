#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cseg/error.hpp"

namespace cseg {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

std::vector<char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<char>& bytes);

// Little-endian binary container writer used by model checkpoints.
class BinaryWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        bytes(&v, sizeof v);
    }
    template <typename T>
    void put_array(const std::vector<T>& v) {
        for (const auto& x : v) put(x);
    }
    void tag(const char (&magic)[5]) { bytes(magic, 4); }

    const std::vector<char>& buffer() const { return buf_; }
    void save(const std::string& path) const;

private:
    std::vector<char> buf_;
};

// Reader with byte-offset tracking; every failure is a FormatError naming the offset.
class BinaryReader {
public:
    explicit BinaryReader(std::vector<char> data) : data_(std::move(data)) {}
    static BinaryReader from_file(const std::string& path);

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    void read(void* p, std::size_t n) {
        if (data_.size() - pos_ < n)
            fail(ErrorCode::FormatError, "unexpected end of data at byte " + std::to_string(pos_) + " (need " +
                                             std::to_string(n) + " bytes, have " +
                                             std::to_string(data_.size() - pos_) + ")");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T v;
        read(&v, sizeof v);
        return v;
    }
    // Reads a value and checks it against [lo, hi].
    template <typename T>
    T get_in(T lo, T hi, const char* what) {
        const auto at = pos_;
        const T v = get<T>();
        if (!(v >= lo && v <= hi))
            fail(ErrorCode::FormatError, std::string(what) + " out of range at byte " + std::to_string(at));
        return v;
    }
    float get_finite_f32(const char* what);
    void expect_tag(const char (&magic)[5]);

private:
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

}  // namespace cseg
