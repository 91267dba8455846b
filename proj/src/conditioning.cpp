#include "physiolite/conditioning.hpp"

#include <algorithm>
#include <cmath>

namespace physiolite {

using cplx = std::complex<double>;

std::complex<double> IIRFilter::response(double freq_hz) const {
    const double w = 2.0 * M_PI * freq_hz / sample_rate_hz;
    const cplx z1 = std::polar(1.0, -w);
    const cplx z2 = z1 * z1;
    cplx h = 1.0;
    for (const auto& s : sections)
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    return h;
}

bool IIRFilter::stable() const {
    for (const auto& s : sections) {
        // roots of z^2 + a1 z + a2
        const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
        const cplx p1 = (-s.a1 + disc) / 2.0;
        const cplx p2 = (-s.a1 - disc) / 2.0;
        if (std::abs(p1) >= 1.0 || std::abs(p2) >= 1.0) return false;
    }
    return true;
}

namespace {

void check_stable(const IIRFilter& f) {
    if (!f.stable()) throw DataError("designed filter is unstable");
    for (const auto& s : f.sections)
        if (!std::isfinite(s.b0) || !std::isfinite(s.b1) || !std::isfinite(s.b2) ||
            !std::isfinite(s.a1) || !std::isfinite(s.a2))
            throw DataError("designed filter has non-finite coefficients");
}

// Greedy conjugate pairing of a conjugate-closed pole set.
std::vector<std::pair<cplx, cplx>> pair_conjugates(std::vector<cplx> poles) {
    std::vector<std::pair<cplx, cplx>> pairs;
    while (!poles.empty()) {
        size_t i = 0;
        for (size_t j = 1; j < poles.size(); ++j)
            if (std::abs(poles[j].imag()) > std::abs(poles[i].imag())) i = j;
        const cplx p = poles[i];
        poles.erase(poles.begin() + static_cast<ptrdiff_t>(i));
        size_t best = 0;
        double best_d = std::abs(poles[0] - std::conj(p));
        for (size_t j = 1; j < poles.size(); ++j) {
            const double d = std::abs(poles[j] - std::conj(p));
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        pairs.emplace_back(p, poles[best]);
        poles.erase(poles.begin() + static_cast<ptrdiff_t>(best));
    }
    return pairs;
}

}  // namespace

IIRFilter design_butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs_hz) {
    if (!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs_hz / 2.0))
        throw DataError("band-pass corners must satisfy 0 < lo < hi < fs/2");
    if (order < 2 || order % 2 != 0) throw DataError("band-pass order must be even and >= 2");

    const double fs2 = 2.0 * fs_hz;
    const double wlo = fs2 * std::tan(M_PI * lo_hz / fs_hz);  // prewarped rad/s
    const double whi = fs2 * std::tan(M_PI * hi_hz / fs_hz);
    const double w0 = std::sqrt(wlo * whi);
    const double bw = whi - wlo;

    // analog lowpass prototype poles on the unit circle, left half plane
    std::vector<cplx> analog;
    analog.reserve(static_cast<size_t>(2 * order));
    for (int k = 0; k < order; ++k) {
        const double theta = M_PI / 2.0 + M_PI * (2.0 * k + 1.0) / (2.0 * order);
        const cplx p = std::polar(1.0, theta);
        // lowpass -> bandpass doubles the pole count
        const cplx pb = 0.5 * bw * p;
        const cplx disc = std::sqrt(pb * pb - cplx(w0 * w0, 0.0));
        analog.push_back(pb + disc);
        analog.push_back(pb - disc);
    }

    // bilinear transform; the n analog zeros at s=0 map to z=1 and the
    // n at infinity map to z=-1, so every section numerator is (z^2 - 1)
    std::vector<cplx> zpoles;
    cplx denom = 1.0;
    for (const cplx& p : analog) {
        zpoles.push_back((fs2 + p) / (fs2 - p));
        denom *= (fs2 - p);
    }
    const double k_digital =
        std::pow(bw, order) * std::pow(fs2, order) / denom.real();

    IIRFilter f;
    f.kind = FilterKind::butterworth_bandpass;
    f.lo_hz = lo_hz;
    f.hi_hz = hi_hz;
    f.design_order = order;
    f.sample_rate_hz = fs_hz;
    for (const auto& [p1, p2] : pair_conjugates(std::move(zpoles))) {
        Biquad s;
        s.b0 = 1.0;
        s.b1 = 0.0;
        s.b2 = -1.0;
        s.a1 = -(p1 + p2).real();
        s.a2 = (p1 * p2).real();
        f.sections.push_back(s);
    }
    for (auto& s : f.sections) {  // distribute gain evenly for headroom
        const double g = std::pow(std::abs(k_digital), 1.0 / order) *
                         (k_digital < 0.0 && &s == &f.sections.front() ? -1.0 : 1.0);
        s.b0 *= g;
        s.b1 *= g;
        s.b2 *= g;
    }
    check_stable(f);
    return f;
}

IIRFilter design_iir_notch(double f0_hz, double q, double fs_hz) {
    if (!(0.0 < f0_hz && f0_hz < fs_hz / 2.0)) throw DataError("notch frequency must be in (0, fs/2)");
    if (q <= 0.0) throw DataError("notch Q must be positive");

    const double w0 = 2.0 * M_PI * f0_hz / fs_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;

    IIRFilter f;
    f.kind = FilterKind::iir_notch;
    f.lo_hz = f.hi_hz = f0_hz;
    f.q = q;
    f.design_order = 2;
    f.sample_rate_hz = fs_hz;
    Biquad s;
    s.b0 = 1.0 / a0;
    s.b1 = -2.0 * std::cos(w0) / a0;
    s.b2 = 1.0 / a0;
    s.a1 = s.b1;
    s.a2 = (1.0 - alpha) / a0;
    f.sections.push_back(s);
    check_stable(f);
    return f;
}

// ---------------------------------------------------------------------------
// Zero-phase filtering
// ---------------------------------------------------------------------------

namespace {

// In-place cascade with steady-state initial conditions per section
// (transposed direct form II).
void sosfilt(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const auto& s : sections) {
        const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        double z1 = x.empty() ? 0.0 : x[0] * (dc - s.b0);
        double z2 = x.empty() ? 0.0 : x[0] * (s.b2 - s.a2 * dc);
        for (double& v : x) {
            const double in = v;
            const double y = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * y + z2;
            z2 = s.b2 * in - s.a2 * y;
            v = y;
        }
    }
}

}  // namespace

namespace {

// The second pass re-filters the first pass's own transients, and a pole at
// r e^{jw} responds to its twin with a t*r^t envelope, so the wing length
// solves (t+1) r^t <= 1e-7 for the slowest pole rather than plain r^t.
size_t settling_estimate(const IIRFilter& f) {
    double r = 0.0;
    for (const auto& s : f.sections) {
        const cplx disc = std::sqrt(cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
        r = std::max({r, std::abs((-s.a1 + disc) / 2.0), std::abs((-s.a1 - disc) / 2.0)});
    }
    if (r <= 0.0 || r >= 1.0) return 0;
    const double log_r = -std::log(r);
    double t = -std::log(1e-7) / log_r;
    for (int i = 0; i < 4; ++i) t = (-std::log(1e-7) + std::log(t + 1.0)) / log_r;
    return static_cast<size_t>(std::ceil(t));
}

}  // namespace

std::vector<double> filtfilt(const IIRFilter& filter, const std::vector<double>& x) {
    const size_t min_pad = 3 * (2 * filter.sections.size() + 1);
    if (x.size() <= min_pad) throw DataError("signal too short for zero-phase filtering");
    // narrow designs (high-Q notch, sub-Hz corners) ring far past the
    // conventional 3*(order+1) wing, so the padding grows with the slowest
    // pole's settling time, capped by the reflectable length
    const size_t pad = std::min(std::max(min_pad, settling_estimate(filter)), x.size() - 1);

    // odd reflection about both endpoints damps edge transients
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * pad);
    for (size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.front() - x[pad - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x.back() - x[x.size() - 2 - i]);

    sosfilt(filter.sections, ext);
    std::reverse(ext.begin(), ext.end());
    sosfilt(filter.sections, ext);
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<ptrdiff_t>(pad),
                               ext.end() - static_cast<ptrdiff_t>(pad));
}

MultiChannelSignal filtfilt(const IIRFilter& filter, const MultiChannelSignal& signal) {
    MultiChannelSignal out = signal;
    for (int c = 0; c < signal.channels; ++c) {
        std::vector<double> ch(signal.data.begin() + static_cast<size_t>(c) * signal.samples_per_channel,
                               signal.data.begin() + static_cast<size_t>(c + 1) * signal.samples_per_channel);
        ch = filtfilt(filter, ch);
        std::copy(ch.begin(), ch.end(),
                  out.data.begin() + static_cast<size_t>(c) * signal.samples_per_channel);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Median baseline removal
// ---------------------------------------------------------------------------

std::vector<double> median_baseline_remove(const std::vector<double>& x, double kernel_seconds,
                                           double fs_hz) {
    int64_t kernel = llround(kernel_seconds * fs_hz);
    if (kernel % 2 == 0) ++kernel;
    if (kernel < 1) kernel = 1;
    if (kernel > static_cast<int64_t>(x.size()))
        throw DataError("median kernel longer than the signal");

    const int64_t half = kernel / 2;
    const int64_t n = static_cast<int64_t>(x.size());
    std::vector<double> out(x.size());
    std::vector<double> scratch;
    scratch.reserve(static_cast<size_t>(kernel));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t lo = std::max<int64_t>(0, i - half);
        const int64_t hi = std::min<int64_t>(n - 1, i + half);
        scratch.assign(x.begin() + lo, x.begin() + hi + 1);
        const auto mid = scratch.begin() + (scratch.size() - 1) / 2;
        std::nth_element(scratch.begin(), mid, scratch.end());
        double med = *mid;
        if (scratch.size() % 2 == 0) {
            const auto mid2 = scratch.begin() + scratch.size() / 2;
            std::nth_element(scratch.begin(), mid2, scratch.end());
            med = 0.5 * (med + *mid2);
        }
        out[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] - med;
    }
    return out;
}

MultiChannelSignal median_baseline_remove(const MultiChannelSignal& signal, double kernel_seconds) {
    MultiChannelSignal out = signal;
    for (int c = 0; c < signal.channels; ++c) {
        std::vector<double> ch(signal.data.begin() + static_cast<size_t>(c) * signal.samples_per_channel,
                               signal.data.begin() + static_cast<size_t>(c + 1) * signal.samples_per_channel);
        ch = median_baseline_remove(ch, kernel_seconds, signal.sample_rate_hz);
        std::copy(ch.begin(), ch.end(),
                  out.data.begin() + static_cast<size_t>(c) * signal.samples_per_channel);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conditioning recipes
// ---------------------------------------------------------------------------

namespace {

void zscore_channels(MultiChannelSignal& s) {
    constexpr double eps = 1e-6;
    for (int c = 0; c < s.channels; ++c) {
        double* x = &s.data[static_cast<size_t>(c) * s.samples_per_channel];
        const double shift = x[0];
        double mean = 0.0, m2 = 0.0;
        for (int64_t t = 0; t < s.samples_per_channel; ++t) {
            const double v = x[t] - shift;
            const double delta = v - mean;
            mean += delta / static_cast<double>(t + 1);
            m2 += delta * (v - mean);
        }
        const double var = m2 / static_cast<double>(s.samples_per_channel);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t t = 0; t < s.samples_per_channel; ++t) x[t] = (x[t] - shift - mean) * inv;
    }
}

}  // namespace

MultiChannelSignal condition_ecg(const MultiChannelSignal& signal) {
    signal.validate();
    const double fs = signal.sample_rate_hz;
    MultiChannelSignal s = filtfilt(design_iir_notch(50.0, 30.0, fs), signal);
    s = filtfilt(design_butterworth_bandpass(4, 0.67, 40.0, fs), s);
    s = median_baseline_remove(s, 0.4);
    zscore_channels(s);
    return s;
}

MultiChannelSignal condition_emg(const MultiChannelSignal& signal) {
    signal.validate();
    const double fs = signal.sample_rate_hz;
    MultiChannelSignal s = filtfilt(design_butterworth_bandpass(4, 20.0, 0.95 * fs / 2.0, fs), signal);
    s = filtfilt(design_iir_notch(50.0, 30.0, fs), s);
    zscore_channels(s);
    return s;
}

}  // namespace physiolite
