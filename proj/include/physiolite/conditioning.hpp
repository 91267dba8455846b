#pragma once

#include <complex>
#include <vector>

#include "physiolite/signal.hpp"

namespace physiolite {

// One second-order section, a0 normalized to 1.
struct Biquad {
    double b0 = 0, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;
};

enum class FilterKind { butterworth_bandpass, iir_notch };

struct IIRFilter {
    std::vector<Biquad> sections;
    FilterKind kind = FilterKind::butterworth_bandpass;
    double lo_hz = 0, hi_hz = 0, q = 0;
    int design_order = 0;
    double sample_rate_hz = 0;

    std::complex<double> response(double freq_hz) const;  // H(e^{jw})
    double gain(double freq_hz) const { return std::abs(response(freq_hz)); }
    bool stable() const;  // all section poles strictly inside the unit circle
};

// Analog Butterworth prototype -> band-pass transform -> bilinear with
// prewarping, as a cascade of `order` second-order sections.
IIRFilter design_butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs_hz);

// Second-order notch, -3 dB bandwidth f0/q.
IIRFilter design_iir_notch(double f0_hz, double q, double fs_hz);

// Zero-phase forward-backward filtering with reflective padding and
// steady-state section initialization.
std::vector<double> filtfilt(const IIRFilter& filter, const std::vector<double>& x);
MultiChannelSignal filtfilt(const IIRFilter& filter, const MultiChannelSignal& signal);

// Subtracts a running median (shrinking window at the edges). Kernel length
// in samples is round(kernel_seconds * fs), forced odd.
std::vector<double> median_baseline_remove(const std::vector<double>& x, double kernel_seconds,
                                           double fs_hz);
MultiChannelSignal median_baseline_remove(const MultiChannelSignal& signal, double kernel_seconds);

// Stage orders follow the reference conditioning recipes used for
// baseline-parity preprocessing; the learned front-end replaces these on
// the device path.
MultiChannelSignal condition_ecg(const MultiChannelSignal& signal);
MultiChannelSignal condition_emg(const MultiChannelSignal& signal);

}  // namespace physiolite
