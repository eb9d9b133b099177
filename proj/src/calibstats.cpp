#include "segquant/calibstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace segquant {

void CalibStats::observe(const Tensor& x) {
    if (x.rank() != 2)
        throw_validation("shape_mismatch", "observe expects rank-2 activations");
    if (channels == 0) {
        channels = x.cols();
        ch_min.assign(channels, std::numeric_limits<float>::max());
        ch_max.assign(channels, std::numeric_limits<float>::lowest());
        neg_count.assign(channels, 0);
        pos_count.assign(channels, 0);
    } else if (x.cols() != channels) {
        throw_validation("shape_mismatch", "observe channel count changed");
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
            const float v = x.at(i, c);
            ch_min[c] = std::min(ch_min[c], v);
            ch_max[c] = std::max(ch_max[c], v);
            if (v < 0.0f) ++neg_count[c];
            if (v > 0.0f) ++pos_count[c];
        }
    }
    samples += x.rows();
}

CalibStats CalibStats::merge(const CalibStats& a, const CalibStats& b) {
    if (a.samples == 0) return b;
    if (b.samples == 0) return a;
    if (a.channels != b.channels)
        throw_validation("shape_mismatch", "merge requires matching channel counts");
    CalibStats m = a;
    m.samples += b.samples;
    for (std::size_t c = 0; c < m.channels; ++c) {
        m.ch_min[c] = std::min(m.ch_min[c], b.ch_min[c]);
        m.ch_max[c] = std::max(m.ch_max[c], b.ch_max[c]);
        m.neg_count[c] += b.neg_count[c];
        m.pos_count[c] += b.pos_count[c];
    }
    return m;
}

namespace {

void check_observed(const CalibStats& s, std::size_t c0, std::size_t c1) {
    if (s.samples == 0)
        throw_validation("empty_stats", "no samples observed");
    if (c0 >= c1 || c1 > s.channels)
        throw_validation("bad_range", "channel range out of bounds");
}

}  // namespace

float CalibStats::group_min(std::size_t c0, std::size_t c1) const {
    check_observed(*this, c0, c1);
    float m = ch_min[c0];
    for (std::size_t c = c0 + 1; c < c1; ++c) m = std::min(m, ch_min[c]);
    return m;
}

float CalibStats::group_max(std::size_t c0, std::size_t c1) const {
    check_observed(*this, c0, c1);
    float m = ch_max[c0];
    for (std::size_t c = c0 + 1; c < c1; ++c) m = std::max(m, ch_max[c]);
    return m;
}

float CalibStats::group_amax(std::size_t c0, std::size_t c1) const {
    return std::max(std::fabs(group_min(c0, c1)), std::fabs(group_max(c0, c1)));
}

double CalibStats::neg_ratio(std::size_t c) const {
    check_observed(*this, c, c + 1);
    return static_cast<double>(neg_count[c]) / static_cast<double>(samples);
}

double CalibStats::pos_ratio(std::size_t c) const {
    check_observed(*this, c, c + 1);
    return static_cast<double>(pos_count[c]) / static_cast<double>(samples);
}

PolarityRow polarity_row(const CalibStats& stats) {
    check_observed(stats, 0, stats.channels);
    PolarityRow row;
    row.channels = stats.channels;
    for (std::size_t c = 0; c < stats.channels; ++c) {
        row.mean_neg += stats.neg_ratio(c);
        row.mean_pos += stats.pos_ratio(c);
    }
    row.mean_neg /= static_cast<double>(stats.channels);
    row.mean_pos /= static_cast<double>(stats.channels);
    return row;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw_validation("shape_mismatch", "metric operands must share a shape");
}

}  // namespace

double frobenius(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

double mse(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b, double data_range) {
    if (!(data_range > 0.0))
        throw_validation("bad_range", "psnr data_range must be positive");
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

double ssim(const Tensor& a, const Tensor& b, int window, double k1, double k2,
            double data_range) {
    check_same_shape(a, b);
    if (a.rank() != 2)
        throw_validation("shape_mismatch", "ssim expects rank-2 tensors");
    if (!(data_range > 0.0))
        throw_validation("bad_range", "ssim data_range must be positive");

    const std::size_t h = a.rows(), w = a.cols();
    const std::size_t wh = std::min<std::size_t>(window, h);
    const std::size_t ww = std::min<std::size_t>(window, w);
    const double c1 = (k1 * data_range) * (k1 * data_range);
    const double c2 = (k2 * data_range) * (k2 * data_range);
    const double n = static_cast<double>(wh * ww);

    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i0 = 0; i0 + wh <= h; ++i0) {
        for (std::size_t j0 = 0; j0 + ww <= w; ++j0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t i = i0; i < i0 + wh; ++i) {
                for (std::size_t j = j0; j < j0 + ww; ++j) {
                    const double va = a.at(i, j), vb = b.at(i, j);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double ma = sa / n, mb = sb / n;
            const double va = saa / n - ma * ma;
            const double vb = sbb / n - mb * mb;
            const double cov = sab / n - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace segquant
