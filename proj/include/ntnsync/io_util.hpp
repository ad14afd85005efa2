#pragma once

#include <string>

#include "ntnsync/common.hpp"
#include "ntnsync/phase_series.hpp"

namespace ntnsync {

// Header-less raw IQ: interleaved little-endian float32 I,Q pairs.
void write_iq_f32(const IqBuffer& buf, const std::string& path);
IqBuffer read_iq_f32(const std::string& path);

// (sample_index, phase) CSV for plotting phase-series traces.
void write_phase_csv(const PhaseSeries& ps, const std::string& path);

}  // namespace ntnsync
