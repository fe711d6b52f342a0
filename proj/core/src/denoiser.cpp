#include "uattr/denoiser.hpp"

#include <cmath>
#include <string>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"

namespace uattr {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// y = W x + b with an f32 weight matrix read as double.
void affine(std::span<const float> w, std::span<const float> b, const std::vector<double>& x,
            std::vector<double>& y) {
    const std::size_t rows = b.size();
    const std::size_t cols = x.size();
    y.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = double(b[r]);
        const float* wr = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += double(wr[c]) * x[c];
        y[r] = acc;
    }
}

void check_stage_finite(const std::vector<double>& values, const char* segment) {
    for (double v : values) {
        if (!std::isfinite(v))
            fail(ErrorKind::numeric,
                 std::string("non-finite activation after segment '") + segment + "'");
    }
}

}  // namespace

void DenoiserSpec::validate() const {
    if (hidden < 1) fail(ErrorKind::validation, "hidden must be >= 1");
    if (temb_dim < 2 || temb_dim % 2 != 0) fail(ErrorKind::validation, "temb_dim must be even and >= 2");
    if (embed_dim < 1) fail(ErrorKind::validation, "embed_dim must be >= 1");
}

LayoutPtr make_denoiser_layout(const DiffusionConfig& dcfg, const DenoiserSpec& spec) {
    dcfg.validate();
    spec.validate();
    const std::size_t pixels = std::size_t(dcfg.image_shape.size());
    const std::size_t in_dim = pixels + std::size_t(spec.temb_dim);
    const std::size_t h = std::size_t(spec.hidden);
    const std::size_t e = std::size_t(spec.embed_dim);
    std::vector<SegmentSpec> segs;
    std::size_t off = 0;
    auto push = [&](const char* name, std::size_t len) {
        segs.push_back({name, off, len});
        off += len;
    };
    push("layer1_w", h * in_dim);
    push("layer1_b", h);
    push("class_embed", std::size_t(dcfg.num_classes) * e);
    push("cond_key", h * e);
    push("cond_value", h * e);
    push("layer2_w", h * h);
    push("layer2_b", h);
    push("out_w", pixels * h);
    push("out_b", pixels);
    return std::make_shared<const ParamLayout>(std::move(segs));
}

Denoiser::Denoiser(const DiffusionConfig& dcfg, const DenoiserSpec& spec)
    : spec_(spec),
      num_classes_(dcfg.num_classes),
      pixels_(dcfg.image_shape.size()),
      layout_(make_denoiser_layout(dcfg, spec)) {}

ParamVector Denoiser::init_params(std::uint64_t seed) const {
    ParamVector theta(layout_);
    const std::size_t in_dim = std::size_t(pixels_ + spec_.temb_dim);
    struct InitRule {
        const char* name;
        double scale;
    };
    const InitRule rules[] = {
        {"layer1_w", 1.0 / std::sqrt(double(in_dim))},
        {"layer1_b", 0.0},
        {"class_embed", 1.0},
        {"cond_key", 1.0 / std::sqrt(double(spec_.embed_dim))},
        {"cond_value", 1.0 / std::sqrt(double(spec_.embed_dim))},
        {"layer2_w", 1.0 / std::sqrt(double(spec_.hidden))},
        {"layer2_b", 0.0},
        {"out_w", 1.0 / std::sqrt(double(spec_.hidden))},
        {"out_b", 0.0},
    };
    std::uint64_t seg_index = 0;
    for (const auto& rule : rules) {
        auto span = theta.segment_span(rule.name);
        if (rule.scale == 0.0) {
            for (auto& v : span) v = 0.0f;
        } else {
            const std::uint64_t key = make_key(Stream::weight_init, seed, seg_index);
            fill_normal(key, span);
            for (auto& v : span) v = float(double(v) * rule.scale);
        }
        ++seg_index;
    }
    return theta;
}

std::vector<double> Denoiser::time_embedding(int t) const {
    const int half = spec_.temb_dim / 2;
    std::vector<double> emb(std::size_t(spec_.temb_dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        emb[std::size_t(2 * i)] = std::sin(double(t) * freq);
        emb[std::size_t(2 * i + 1)] = std::cos(double(t) * freq);
    }
    return emb;
}

void Denoiser::check_inputs(const ParamVector& theta, const std::vector<double>& xt, int t,
                            int label) const {
    if (!theta.layout || !(*theta.layout == *layout_))
        fail(ErrorKind::validation, "denoiser forward: parameter layout mismatch");
    if (xt.size() != std::size_t(pixels_))
        fail(ErrorKind::validation, "denoiser forward: expected " + std::to_string(pixels_) + " pixels");
    if (t < 1) fail(ErrorKind::range, "denoiser forward: timestep must be >= 1");
    if (label < 0 || label >= num_classes_)
        fail(ErrorKind::range, "denoiser forward: label " + std::to_string(label) + " outside [0, " +
                                   std::to_string(num_classes_) + ")");
}

std::vector<double> Denoiser::forward(const ParamVector& theta, const std::vector<double>& xt,
                                      int t, int label, Activations* cache) const {
    check_inputs(theta, xt, t, label);
    const std::size_t h = std::size_t(spec_.hidden);
    const std::size_t e = std::size_t(spec_.embed_dim);

    Activations local;
    Activations& a = cache ? *cache : local;

    a.input = xt;
    const auto temb = time_embedding(t);
    a.input.insert(a.input.end(), temb.begin(), temb.end());

    affine(theta.segment_span("layer1_w"), theta.segment_span("layer1_b"), a.input, a.h1_pre);
    check_stage_finite(a.h1_pre, "layer1_w");
    a.h1.resize(h);
    for (std::size_t i = 0; i < h; ++i) a.h1[i] = silu(a.h1_pre[i]);

    auto embed = theta.segment_span("class_embed");
    std::vector<double> cls(e);
    for (std::size_t i = 0; i < e; ++i) cls[i] = double(embed[std::size_t(label) * e + i]);
    check_stage_finite(cls, "class_embed");

    auto wk = theta.segment_span("cond_key");
    auto wv = theta.segment_span("cond_value");
    a.gate.resize(h);
    a.v.resize(h);
    a.h1c.resize(h);
    for (std::size_t r = 0; r < h; ++r) {
        double k_acc = 0.0, v_acc = 0.0;
        const float* kr = wk.data() + r * e;
        const float* vr = wv.data() + r * e;
        for (std::size_t c = 0; c < e; ++c) {
            k_acc += double(kr[c]) * cls[c];
            v_acc += double(vr[c]) * cls[c];
        }
        a.gate[r] = sigmoid(k_acc);
        a.v[r] = v_acc;
        a.h1c[r] = a.h1[r] + a.gate[r] * v_acc;
    }
    check_stage_finite(a.v, "cond_value");
    check_stage_finite(a.h1c, "cond_key");

    affine(theta.segment_span("layer2_w"), theta.segment_span("layer2_b"), a.h1c, a.h2_pre);
    check_stage_finite(a.h2_pre, "layer2_w");
    a.h2.resize(h);
    for (std::size_t i = 0; i < h; ++i) a.h2[i] = silu(a.h2_pre[i]);

    affine(theta.segment_span("out_w"), theta.segment_span("out_b"), a.h2, a.out);
    check_stage_finite(a.out, "out_w");
    return a.out;
}

void Denoiser::backward(const ParamVector& theta, const Activations& acts, int label,
                        const std::vector<double>& dout, std::vector<double>& grad) const {
    if (grad.size() != layout_->total_size())
        fail(ErrorKind::validation, "denoiser backward: gradient buffer size mismatch");
    if (dout.size() != std::size_t(pixels_))
        fail(ErrorKind::validation, "denoiser backward: dout size mismatch");
    const std::size_t h = std::size_t(spec_.hidden);
    const std::size_t e = std::size_t(spec_.embed_dim);
    const std::size_t in_dim = acts.input.size();

    const auto& L = *layout_;
    const std::size_t o_l1w = L.segment("layer1_w").offset;
    const std::size_t o_l1b = L.segment("layer1_b").offset;
    const std::size_t o_emb = L.segment("class_embed").offset;
    const std::size_t o_ck = L.segment("cond_key").offset;
    const std::size_t o_cv = L.segment("cond_value").offset;
    const std::size_t o_l2w = L.segment("layer2_w").offset;
    const std::size_t o_l2b = L.segment("layer2_b").offset;
    const std::size_t o_ow = L.segment("out_w").offset;
    const std::size_t o_ob = L.segment("out_b").offset;

    auto wout = theta.segment_span("out_w");
    auto w2 = theta.segment_span("layer2_w");
    auto wk = theta.segment_span("cond_key");
    auto wv = theta.segment_span("cond_value");
    auto embed = theta.segment_span("class_embed");

    std::vector<double> cls(e);
    for (std::size_t i = 0; i < e; ++i) cls[i] = double(embed[std::size_t(label) * e + i]);

    // out = W3 h2 + b3
    std::vector<double> dh2(h, 0.0);
    for (std::size_t r = 0; r < std::size_t(pixels_); ++r) {
        const double g = dout[r];
        grad[o_ob + r] += g;
        const float* wr = wout.data() + r * h;
        for (std::size_t c = 0; c < h; ++c) {
            grad[o_ow + r * h + c] += g * acts.h2[c];
            dh2[c] += g * double(wr[c]);
        }
    }

    // h2 = silu(W2 h1c + b2)
    std::vector<double> dh2_pre(h);
    for (std::size_t i = 0; i < h; ++i) dh2_pre[i] = dh2[i] * silu_grad(acts.h2_pre[i]);
    std::vector<double> dh1c(h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        const double g = dh2_pre[r];
        grad[o_l2b + r] += g;
        const float* wr = w2.data() + r * h;
        for (std::size_t c = 0; c < h; ++c) {
            grad[o_l2w + r * h + c] += g * acts.h1c[c];
            dh1c[c] += g * double(wr[c]);
        }
    }

    // h1c = h1 + gate * v, gate = sigmoid(Wk e), v = Wv e
    std::vector<double> dcls(e, 0.0);
    std::vector<double> dh1_pre(h);
    for (std::size_t r = 0; r < h; ++r) {
        const double g = dh1c[r];
        const double dgate_pre = g * acts.v[r] * acts.gate[r] * (1.0 - acts.gate[r]);
        const double dv = g * acts.gate[r];
        const float* kr = wk.data() + r * e;
        const float* vr = wv.data() + r * e;
        for (std::size_t c = 0; c < e; ++c) {
            grad[o_ck + r * e + c] += dgate_pre * cls[c];
            grad[o_cv + r * e + c] += dv * cls[c];
            dcls[c] += dgate_pre * double(kr[c]) + dv * double(vr[c]);
        }
        dh1_pre[r] = g * silu_grad(acts.h1_pre[r]);
    }
    for (std::size_t c = 0; c < e; ++c) grad[o_emb + std::size_t(label) * e + c] += dcls[c];

    // h1 = silu(W1 in + b1)
    for (std::size_t r = 0; r < h; ++r) {
        const double g = dh1_pre[r];
        grad[o_l1b + r] += g;
        for (std::size_t c = 0; c < in_dim; ++c) grad[o_l1w + r * in_dim + c] += g * acts.input[c];
    }
}

}  // namespace uattr
