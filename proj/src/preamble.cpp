#include "ntnsync/preamble.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ntnsync {

void PreambleConfig::validate() const {
    if (n_rep < 1) throw std::invalid_argument("n_rep must be >= 1");
    if (fft_len < 4 || fft_len % 4 != 0) throw std::invalid_argument("fft_len must be a positive multiple of 4");
    if (symbols_per_sg < 1) throw std::invalid_argument("symbols_per_sg must be >= 1");
    if (n_sc_total < 8) throw std::invalid_argument("n_sc_total must be >= 8 for the hopping rule");
    if (n_off < 0 || n_off >= n_sc_total) throw std::invalid_argument("n_off out of [0, n_sc_total)");
    if (sample_rate <= 0.0) throw std::invalid_argument("sample_rate must be positive");
}

SubcarrierSchedule build_schedule(const PreambleConfig& cfg) {
    cfg.validate();
    static constexpr int kHops[3] = {1, 6, -1};
    SubcarrierSchedule sched;
    sched.indices.reserve(static_cast<std::size_t>(cfg.num_sg()));
    for (int u = 0; u < cfg.n_rep; ++u) {
        int sc = (cfg.n_off + 7 * u) % cfg.n_sc_total;
        int dir = 1;
        sched.indices.push_back(sc);
        for (int hop : kHops) {
            int next = sc + dir * hop;
            if (next < 0 || next >= cfg.n_sc_total) {
                dir = -dir;
                next = sc + dir * hop;
            }
            if (next < 0 || next >= cfg.n_sc_total)
                throw std::logic_error("hopping rule left the subcarrier range");
            sc = next;
            sched.indices.push_back(sc);
        }
    }
    return sched;
}

cdouble preamble_sample_at(const PreambleConfig& cfg, const SubcarrierSchedule& sched, double u) {
    const double total = static_cast<double>(cfg.total_len());
    if (u < 0.0 || u >= total) return {0.0, 0.0};
    const int sg_len = cfg.sg_len();
    const int m = static_cast<int>(u / sg_len);
    const double v = u - static_cast<double>(m) * sg_len;
    const double beta = static_cast<double>(sched.indices[static_cast<std::size_t>(m)]) / cfg.fft_len;
    // Tone phase referenced to the start of the symbol part; the CP then
    // falls at negative offsets, which is exactly the cyclic tail copy since
    // the tone has period fft_len / gcd and fft_len divides beta's cycle.
    double cycles = beta * (v - cfg.cp_len());
    cycles -= std::floor(cycles);
    return std::polar(1.0, kTwoPi * cycles);
}

IqBuffer gen_preamble(const PreambleConfig& cfg, const SubcarrierSchedule& sched) {
    cfg.validate();
    if (static_cast<int>(sched.indices.size()) != cfg.num_sg())
        throw std::invalid_argument("schedule length must equal 4*n_rep");

    IqBuffer out;
    out.base_index = cfg.n_start;
    out.samples.resize(static_cast<std::size_t>(cfg.total_len()));
    const int sg_len = cfg.sg_len();
    std::size_t w = 0;
    for (int m = 0; m < cfg.num_sg(); ++m) {
        const int sc = sched.indices[static_cast<std::size_t>(m)];
        const double beta = static_cast<double>(sc) / cfg.fft_len;
        for (int v = 0; v < sg_len; ++v) {
            double cycles = beta * (v - cfg.cp_len());
            cycles -= std::floor(cycles);
            out.samples[w++] = std::polar(1.0, kTwoPi * cycles);
        }
    }
    return out;
}

}  // namespace ntnsync
