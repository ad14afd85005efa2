#pragma once

#include <cstdint>
#include <vector>

#include "ntnsync/common.hpp"

namespace ntnsync {

enum class PreambleFormat { Format0, Format1 };

// NPRACH preamble parameters. One symbol group (SG) is a cyclic prefix plus
// `symbols_per_sg` identical single-tone symbols on one 3.75 kHz subcarrier;
// four SGs form a unit and `n_rep` units form the transmission.
struct PreambleConfig {
    PreambleFormat format = PreambleFormat::Format1;
    int n_rep = 1;                 // number of 4-SG units
    std::int64_t n_start = 0;      // absolute sample index of the first sample
    int n_off = 0;                 // subcarrier of the first SG of unit 0
    int n_sc_total = 12;           // subcarriers available to NPRACH
    int fft_len = 512;             // samples per symbol at 1.92 Msps
    int symbols_per_sg = 5;
    double sample_rate = 1.92e6;

    // Format couples the CP to the symbol length, so it is derived rather
    // than stored (Format0: N/4, Format1: N).
    int cp_len() const { return format == PreambleFormat::Format0 ? fft_len / 4 : fft_len; }
    int sg_len() const { return cp_len() + symbols_per_sg * fft_len; }
    int num_sg() const { return 4 * n_rep; }
    std::int64_t total_len() const { return static_cast<std::int64_t>(num_sg()) * sg_len(); }
    double subcarrier_spacing() const { return sample_rate / fft_len; }

    // Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

// Per-SG subcarrier indices, length 4*n_rep.
struct SubcarrierSchedule {
    std::vector<int> indices;
};

// Deterministic hopping rule shared by transmitter and receiver: unit u
// starts at (n_off + 7u) mod n_sc_total; within a unit the hops {+1, +6, -1}
// apply in order, and the hop direction flips (for the rest of the unit)
// whenever a hop would leave [0, n_sc_total).
SubcarrierSchedule build_schedule(const PreambleConfig& cfg);

// Time-domain baseband preamble, unit modulus, base_index = n_start.
IqBuffer gen_preamble(const PreambleConfig& cfg, const SubcarrierSchedule& sched);

// Ideal preamble sample at (possibly fractional) offset u relative to the
// first sample; 0 outside [0, total_len). Each SG is a pure tone that is
// continuous across its CP boundary because the tone period divides the
// symbol length.
cdouble preamble_sample_at(const PreambleConfig& cfg, const SubcarrierSchedule& sched, double u);

}  // namespace ntnsync
