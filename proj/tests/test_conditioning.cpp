#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "physiolite/conditioning.hpp"
#include "physiolite/rng.hpp"

using namespace physiolite;

namespace {

std::vector<double> sinusoid(double freq, double fs, int64_t n, double amp = 1.0) {
    std::vector<double> x(static_cast<size_t>(n));
    for (int64_t t = 0; t < n; ++t) x[static_cast<size_t>(t)] = amp * std::sin(2.0 * M_PI * freq * t / fs);
    return x;
}

double rms(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

// single-bin DFT power, the oracle for tone attenuation; measured over the
// largest prefix that makes the bin an integer (no leakage)
double bin_power(const std::vector<double>& x, double freq, double fs) {
    const double period = fs / freq;
    size_t n = x.size();
    while (n > 0 && std::abs(n / period - std::round(n / period)) > 1e-9) --n;
    std::complex<double> acc = 0.0;
    for (size_t t = 0; t < n; ++t)
        acc += x[t] * std::polar(1.0, -2.0 * M_PI * freq * static_cast<double>(t) / fs);
    return std::norm(acc) / static_cast<double>(n);
}

// cross-correlation peak lag between equal-length signals
int64_t xcorr_peak_lag(const std::vector<double>& a, const std::vector<double>& b, int64_t max_lag) {
    double best = -1e300;
    int64_t best_lag = 0;
    const int64_t n = static_cast<int64_t>(a.size());
    for (int64_t lag = -max_lag; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (int64_t t = std::max<int64_t>(0, -lag); t < std::min(n, n - lag); ++t)
            acc += a[static_cast<size_t>(t + lag)] * b[static_cast<size_t>(t)];
        if (acc > best) {
            best = acc;
            best_lag = lag;
        }
    }
    return best_lag;
}

MultiChannelSignal as_signal(std::vector<double> x, double fs) {
    MultiChannelSignal s;
    s.channels = 1;
    s.samples_per_channel = static_cast<int64_t>(x.size());
    s.sample_rate_hz = fs;
    s.data = std::move(x);
    return s;
}

}  // namespace

TEST_CASE("butterworth band-pass response oracle") {
    const IIRFilter f = design_butterworth_bandpass(4, 0.67, 40.0, 500.0);
    REQUIRE(f.sections.size() == 4);
    CHECK(f.stable());
    SUBCASE("stopband limits") {
        CHECK(f.gain(1e-9) < 1e-3);
        CHECK(f.gain(250.0 - 1e-9) < 1e-3);
    }
    SUBCASE("unity at the geometric center") {
        const double fg = std::sqrt(0.67 * 40.0);
        CHECK(f.gain(fg) > 0.99);
        CHECK(f.gain(fg) < 1.01);
    }
    SUBCASE("-3 dB at the corners") {
        CHECK(f.gain(0.67) > 0.70);
        CHECK(f.gain(0.67) < 0.72);
        CHECK(f.gain(40.0) > 0.70);
        CHECK(f.gain(40.0) < 0.72);
    }
    SUBCASE("pole check at design time") {
        for (const auto& s : f.sections) {
            const std::complex<double> disc = std::sqrt(std::complex<double>(s.a1 * s.a1 - 4 * s.a2, 0));
            CHECK(std::abs((-s.a1 + disc) / 2.0) < 1.0);
            CHECK(std::abs((-s.a1 - disc) / 2.0) < 1.0);
        }
    }
    SUBCASE("bad corners are rejected") {
        CHECK_THROWS_AS(design_butterworth_bandpass(4, 40.0, 0.67, 500.0), DataError);
        CHECK_THROWS_AS(design_butterworth_bandpass(4, 1.0, 260.0, 500.0), DataError);
        CHECK_THROWS_AS(design_butterworth_bandpass(3, 1.0, 40.0, 500.0), DataError);
    }
}

TEST_CASE("notch response oracle") {
    const IIRFilter f = design_iir_notch(50.0, 30.0, 500.0);
    CHECK(f.stable());
    SUBCASE("deep null at the notch frequency") { CHECK(f.gain(50.0) < 1e-3); }
    SUBCASE("unity at DC and Nyquist") {
        CHECK(f.gain(1e-9) == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(f.gain(250.0 - 1e-9) == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("-3 dB bandwidth near f0/Q") {
        double lo = 0.0, hi = 0.0;
        const double target = 1.0 / std::sqrt(2.0);
        for (double fr = 45.0; fr <= 50.0; fr += 1e-4)
            if (f.gain(fr) <= target) {
                lo = fr;
                break;
            }
        for (double fr = 55.0; fr >= 50.0; fr -= 1e-4)
            if (f.gain(fr) <= target) {
                hi = fr;
                break;
            }
        const double bw = hi - lo;
        CHECK(std::abs(bw - 50.0 / 30.0) / (50.0 / 30.0) < 0.10);
    }
    SUBCASE("bad parameters rejected") {
        CHECK_THROWS_AS(design_iir_notch(260.0, 30.0, 500.0), DataError);
        CHECK_THROWS_AS(design_iir_notch(50.0, -1.0, 500.0), DataError);
    }
}

TEST_CASE("filtfilt is zero phase") {
    const double fs = 500.0;
    // n-1 divisible by both tone periods, so the test tones are coherent:
    // they start and end on zero crossings and reflection padding continues
    // them exactly
    const int64_t n = 5001;
    const IIRFilter bp = design_butterworth_bandpass(4, 0.67, 40.0, fs);
    SUBCASE("passband sinusoid keeps its amplitude and phase") {
        const auto x = sinusoid(10.0, fs, n);
        const auto y = filtfilt(bp, x);
        // effective magnitude is |H|^2, H(10 Hz) in [0.98, 1.0]
        const double ratio = std::sqrt(bin_power(y, 10.0, fs) / bin_power(x, 10.0, fs));
        CHECK(ratio > 0.98 * 0.98);
        CHECK(ratio <= 1.0 + 1e-6);
        CHECK(xcorr_peak_lag(y, x, 25) == 0);
    }
    SUBCASE("notch kills a 50 Hz tone") {
        const IIRFilter notch = design_iir_notch(50.0, 30.0, fs);
        const auto x = sinusoid(50.0, fs, n);
        const auto y = filtfilt(notch, x);
        CHECK(rms(y) < 1e-3 * rms(x));
    }
    SUBCASE("all-zero input stays zero") {
        std::vector<double> x(512, 0.0);
        for (double v : filtfilt(bp, x)) CHECK(v == 0.0);
    }
    SUBCASE("too-short input is an error") {
        std::vector<double> x(20, 1.0);
        CHECK_THROWS_AS(filtfilt(bp, x), DataError);  // needs > 3*(2*4+1)=27
    }
}

TEST_CASE("median baseline removal") {
    SUBCASE("constant signal maps to zeros") {
        std::vector<double> x(600, 5.0);
        for (double v : median_baseline_remove(x, 0.4, 500.0)) CHECK(v == 0.0);
    }
    SUBCASE("kernel arithmetic: 0.4 s at 500 Hz is 201 samples") {
        // 200 forced odd to 201; a 200-sample signal is too short, 201 fits
        std::vector<double> short_sig(200, 1.0);
        CHECK_THROWS_AS(median_baseline_remove(short_sig, 0.4, 500.0), DataError);
        std::vector<double> ok_sig(201, 1.0);
        CHECK_NOTHROW(median_baseline_remove(ok_sig, 0.4, 500.0));
    }
    SUBCASE("step baseline removed, fast spike preserved") {
        const double fs = 500.0;
        std::vector<double> x(2000, 0.0);
        for (size_t t = 1000; t < x.size(); ++t) x[t] = 2.0;  // baseline step
        const size_t spike_at = 600;
        for (int o = -5; o <= 5; ++o)
            x[spike_at + static_cast<size_t>(o)] += 1.0 * (1.0 - std::abs(o) / 6.0);
        const auto y = median_baseline_remove(x, 0.4, fs);
        CHECK(y[spike_at] == doctest::Approx(x[spike_at]).epsilon(0.01));
        // baseline flattened away from the transition
        CHECK(std::abs(y[400]) < 1e-9);
        CHECK(std::abs(y[1600]) < 1e-9);
    }
}

TEST_CASE("conditioning recipes") {
    const double fs = 500.0;
    const int64_t n = 4096;
    Rng rng(7);
    SUBCASE("DC-offset ECG loses its mean") {
        std::vector<double> x = sinusoid(8.0, fs, n);
        for (double& v : x) v += 3.0;
        MultiChannelSignal out = condition_ecg(as_signal(x, fs));
        double mean = 0.0;
        for (double v : out.data) mean += v;
        mean /= static_cast<double>(out.data.size());
        CHECK(std::abs(mean) < 1e-3);
    }
    SUBCASE("50 Hz contamination drops by more than 40 dB") {
        const int64_t nb = 5001;  // tones coherent at the endpoints
        std::vector<double> x(static_cast<size_t>(nb));
        for (size_t t = 0; t < x.size(); ++t)
            x[t] = std::sin(2.0 * M_PI * 80.0 * static_cast<double>(t) / fs) + 0.2 * rng.normal();
        auto tone = sinusoid(50.0, fs, nb, 2.0);
        std::vector<double> contaminated = x;
        for (size_t t = 0; t < x.size(); ++t) contaminated[t] += tone[t];
        MultiChannelSignal out = condition_emg(as_signal(contaminated, fs));
        const double before = bin_power(contaminated, 50.0, fs) / (rms(contaminated) * rms(contaminated));
        const double after = bin_power(out.data, 50.0, fs) / (rms(out.data) * rms(out.data));
        CHECK(10.0 * std::log10(before / after) > 40.0);
    }
    SUBCASE("pipeline output is z-scored") {
        std::vector<double> x(static_cast<size_t>(n));
        for (size_t t = 0; t < x.size(); ++t)
            x[t] = 5.0 + std::sin(2.0 * M_PI * 12.0 * static_cast<double>(t) / fs) + 0.3 * rng.normal();
        MultiChannelSignal out = condition_ecg(as_signal(x, fs));
        double mean = 0.0;
        for (double v : out.data) mean += v;
        mean /= static_cast<double>(out.data.size());
        double var = 0.0;
        for (double v : out.data) var += (v - mean) * (v - mean);
        var /= static_cast<double>(out.data.size());
        CHECK(std::abs(mean) < 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("conditioning twice changes RMS by less than 1%") {
        std::vector<double> x(static_cast<size_t>(n));
        for (size_t t = 0; t < x.size(); ++t)
            x[t] = std::sin(2.0 * M_PI * 9.0 * static_cast<double>(t) / fs) + 0.2 * rng.normal();
        MultiChannelSignal once = condition_ecg(as_signal(x, fs));
        MultiChannelSignal twice = condition_ecg(once);
        CHECK(std::abs(rms(twice.data) - rms(once.data)) / rms(once.data) < 0.01);
    }
}
