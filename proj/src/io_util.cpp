#include "ntnsync/io_util.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace ntnsync {

namespace {

void put_f32_le(std::FILE* f, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    std::fwrite(b, 1, 4, f);
}

}  // namespace

void write_iq_f32(const IqBuffer& buf, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    for (const cdouble& s : buf.samples) {
        put_f32_le(f, static_cast<float>(s.real()));
        put_f32_le(f, static_cast<float>(s.imag()));
    }
    std::fclose(f);
}

IqBuffer read_iq_f32(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    IqBuffer buf;
    unsigned char b[8];
    while (std::fread(b, 1, 8, f) == 8) {
        std::uint32_t ui = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        std::uint32_t uq = static_cast<std::uint32_t>(b[4]) | (static_cast<std::uint32_t>(b[5]) << 8) |
                           (static_cast<std::uint32_t>(b[6]) << 16) | (static_cast<std::uint32_t>(b[7]) << 24);
        float i, q;
        std::memcpy(&i, &ui, 4);
        std::memcpy(&q, &uq, 4);
        buf.samples.emplace_back(i, q);
    }
    std::fclose(f);
    return buf;
}

void write_phase_csv(const PhaseSeries& ps, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::fputs("sample_index,phase\n", f);
    for (std::size_t i = 0; i < ps.size(); ++i)
        std::fprintf(f, "%lld,%.9f\n",
                     static_cast<long long>(ps.base_index + static_cast<std::int64_t>(i)), ps.phase[i]);
    std::fclose(f);
}

}  // namespace ntnsync
