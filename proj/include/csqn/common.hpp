#ifndef CSQN_COMMON_HPP
#define CSQN_COMMON_HPP

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csqn {

inline constexpr const char* kVersionString = "csqn 0.1.0";

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / size violations on module boundaries.
struct DimensionError : Error {
    using Error::Error;
};

// Numerical aborts: non-finite losses, singular middle matrices, exhausted
// sampling budgets. The CLI maps these to exit code 4.
struct NumericalError : Error {
    using Error::Error;
};

// Invalid configuration (exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

// Missing or malformed input data (exit code 3).
struct DataError : Error {
    using Error::Error;
};

inline void warn(const std::string& msg) {
    std::fprintf(stderr, "[csqn] warning: %s\n", msg.c_str());
}

namespace io {

// All on-disk integers and floats are little-endian regardless of host.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw DataError("unexpected end of stream");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(sizeof(T) <= 8);
    unsigned char buf[sizeof(T)];
    uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    write_bytes(os, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    read_bytes(is, buf, sizeof(T));
    uint64_t bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
        bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
}

template <typename T>
void write_vec_le(std::ostream& os, const std::vector<T>& v) {
    write_le<uint64_t>(os, v.size());
    for (const T& x : v) write_le<T>(os, x);
}

template <typename T>
std::vector<T> read_vec_le(std::istream& is) {
    const uint64_t n = read_le<uint64_t>(is);
    std::vector<T> v(n);
    for (uint64_t i = 0; i < n; ++i) v[i] = read_le<T>(is);
    return v;
}

}  // namespace io
}  // namespace csqn

#endif  // CSQN_COMMON_HPP
