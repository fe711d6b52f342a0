#include "uattr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"
#include "uattr/storage.hpp"

namespace uattr {

using nlohmann::json;

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

struct Acts {
    std::vector<double> y1, a1, p1, y2, a2, emb, logits;
};

}  // namespace

Encoder::Encoder(ImageShape shape, int num_classes) : shape_(shape), num_classes_(num_classes) {
    if (shape_.channels != 1) fail(ErrorKind::validation, "encoder expects single-channel images");
    if (shape_.height % 2 != 0 || shape_.width % 2 != 0)
        fail(ErrorKind::validation, "encoder expects even image dimensions");
    if (num_classes_ < 2) fail(ErrorKind::validation, "encoder needs at least 2 classes");
    std::vector<SegmentSpec> segs;
    std::size_t off = 0;
    auto push = [&](const char* name, std::size_t len) {
        segs.push_back({name, off, len});
        off += len;
    };
    push("conv1_w", std::size_t(c1_) * 9);
    push("conv1_b", std::size_t(c1_));
    push("conv2_w", std::size_t(c2_) * c1_ * 9);
    push("conv2_b", std::size_t(c2_));
    push("fc_w", std::size_t(num_classes_) * c2_);
    push("fc_b", std::size_t(num_classes_));
    layout_ = std::make_shared<const ParamLayout>(std::move(segs));
}

ParamVector Encoder::init_params(std::uint64_t seed) const {
    ParamVector theta;
    theta.layout = layout_;
    theta.values.assign(layout_->total_size(), 0.0f);
    const struct {
        const char* name;
        double scale;
    } inits[] = {
        {"conv1_w", 1.0 / 3.0},                    // fan_in 9
        {"conv2_w", 1.0 / std::sqrt(9.0 * c1_)},
        {"fc_w", 1.0 / std::sqrt(double(c2_))},
    };
    std::uint64_t seg_index = 0;
    for (const auto& seg : layout_->segments()) {
        const std::uint64_t key = make_key(Stream::encoder_init, seed, seg_index++);
        for (const auto& init : inits) {
            if (seg.name != init.name) continue;
            auto span = theta.segment_span(seg.name);
            fill_normal(key, span);
            for (auto& v : span) v = float(double(v) * init.scale);
        }
    }
    return theta;
}

namespace {

void conv3x3(const double* x, int in_ch, int H, int W, const float* w, const float* b, int out_ch,
             double* y) {
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                double acc = double(b[oc]);
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* xc = x + std::size_t(ic) * H * W;
                    const float* wk = w + (std::size_t(oc) * in_ch + ic) * 9;
                    for (int kr = -1; kr <= 1; ++kr) {
                        const int rr = r + kr;
                        if (rr < 0 || rr >= H) continue;
                        for (int kc = -1; kc <= 1; ++kc) {
                            const int cc = c + kc;
                            if (cc < 0 || cc >= W) continue;
                            acc += double(wk[(kr + 1) * 3 + (kc + 1)]) * xc[rr * W + cc];
                        }
                    }
                }
                y[(std::size_t(oc) * H + r) * W + c] = acc;
            }
        }
    }
}

// gradient of conv3x3 w.r.t. weights, bias, and input
void conv3x3_back(const double* x, int in_ch, int H, int W, const float* w, int out_ch,
                  const double* dy, double* dw, double* db, double* dx) {
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const double g = dy[(std::size_t(oc) * H + r) * W + c];
                if (g == 0.0) continue;
                db[oc] += g;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* xc = x + std::size_t(ic) * H * W;
                    const float* wk = w + (std::size_t(oc) * in_ch + ic) * 9;
                    double* dwk = dw + (std::size_t(oc) * in_ch + ic) * 9;
                    double* dxc = dx ? dx + std::size_t(ic) * H * W : nullptr;
                    for (int kr = -1; kr <= 1; ++kr) {
                        const int rr = r + kr;
                        if (rr < 0 || rr >= H) continue;
                        for (int kc = -1; kc <= 1; ++kc) {
                            const int cc = c + kc;
                            if (cc < 0 || cc >= W) continue;
                            dwk[(kr + 1) * 3 + (kc + 1)] += g * xc[rr * W + cc];
                            if (dxc) dxc[rr * W + cc] += g * double(wk[(kr + 1) * 3 + (kc + 1)]);
                        }
                    }
                }
            }
        }
    }
}

Acts forward_acts(const Encoder& enc, const ParamVector& theta, const std::vector<double>& pixels) {
    const int H = enc.shape().height, W = enc.shape().width;
    const int Hp = H / 2, Wp = W / 2;
    const int c1 = 8, c2 = enc.embed_dim();
    if (pixels.size() != enc.shape().size())
        fail(ErrorKind::validation, "encoder input size mismatch");
    const auto w1 = theta.segment_span("conv1_w"), b1 = theta.segment_span("conv1_b");
    const auto w2 = theta.segment_span("conv2_w"), b2 = theta.segment_span("conv2_b");
    const auto fw = theta.segment_span("fc_w"), fb = theta.segment_span("fc_b");

    Acts a;
    a.y1.assign(std::size_t(c1) * H * W, 0.0);
    conv3x3(pixels.data(), 1, H, W, w1.data(), b1.data(), c1, a.y1.data());
    a.a1.resize(a.y1.size());
    for (std::size_t i = 0; i < a.y1.size(); ++i) a.a1[i] = silu(a.y1[i]);
    a.p1.assign(std::size_t(c1) * Hp * Wp, 0.0);
    for (int ch = 0; ch < c1; ++ch)
        for (int r = 0; r < Hp; ++r)
            for (int c = 0; c < Wp; ++c) {
                const double* src = a.a1.data() + std::size_t(ch) * H * W;
                const double v = src[(2 * r) * W + 2 * c] + src[(2 * r) * W + 2 * c + 1] +
                                 src[(2 * r + 1) * W + 2 * c] + src[(2 * r + 1) * W + 2 * c + 1];
                a.p1[(std::size_t(ch) * Hp + r) * Wp + c] = v / 4.0;
            }
    a.y2.assign(std::size_t(c2) * Hp * Wp, 0.0);
    conv3x3(a.p1.data(), c1, Hp, Wp, w2.data(), b2.data(), c2, a.y2.data());
    a.a2.resize(a.y2.size());
    for (std::size_t i = 0; i < a.y2.size(); ++i) a.a2[i] = silu(a.y2[i]);
    a.emb.assign(c2, 0.0);
    for (int ch = 0; ch < c2; ++ch) {
        double acc = 0.0;
        for (int i = 0; i < Hp * Wp; ++i) acc += a.a2[std::size_t(ch) * Hp * Wp + i];
        a.emb[ch] = acc / double(Hp * Wp);
    }
    const int C = enc.num_classes();
    a.logits.assign(C, 0.0);
    for (int k = 0; k < C; ++k) {
        double acc = double(fb[k]);
        for (int j = 0; j < c2; ++j) acc += double(fw[std::size_t(k) * c2 + j]) * a.emb[j];
        a.logits[k] = acc;
    }
    return a;
}

}  // namespace

std::vector<double> Encoder::embed(const ParamVector& theta, const std::vector<double>& pixels) const {
    if (!theta.layout || !(*theta.layout == *layout_))
        fail(ErrorKind::validation, "encoder parameter layout mismatch");
    return forward_acts(*this, theta, pixels).emb;
}

std::vector<double> Encoder::logits(const ParamVector& theta, const std::vector<double>& pixels) const {
    if (!theta.layout || !(*theta.layout == *layout_))
        fail(ErrorKind::validation, "encoder parameter layout mismatch");
    return forward_acts(*this, theta, pixels).logits;
}

double Encoder::loss_grad(const ParamVector& theta, const std::vector<double>& pixels, int label,
                          std::vector<double>& grad) const {
    if (!theta.layout || !(*theta.layout == *layout_))
        fail(ErrorKind::validation, "encoder parameter layout mismatch");
    if (label < 0 || label >= num_classes_) fail(ErrorKind::range, "encoder label out of range");
    if (grad.size() != layout_->total_size())
        fail(ErrorKind::validation, "encoder gradient buffer size mismatch");

    const int H = shape_.height, W = shape_.width;
    const int Hp = H / 2, Wp = W / 2;
    const int C = num_classes_;
    const Acts acts = forward_acts(*this, theta, pixels);

    // softmax cross entropy
    const double mx = *std::max_element(acts.logits.begin(), acts.logits.end());
    double zsum = 0.0;
    std::vector<double> p(C);
    for (int k = 0; k < C; ++k) {
        p[k] = std::exp(acts.logits[k] - mx);
        zsum += p[k];
    }
    for (auto& v : p) v /= zsum;
    const double loss = -std::log(std::max(p[label], 1e-300));

    const auto w2 = theta.segment_span("conv2_w");
    const auto fw = theta.segment_span("fc_w");
    const auto seg = [&](const char* name) {
        const auto& s = layout_->segment(name);
        return grad.data() + s.offset;
    };
    double* dfw = seg("fc_w");
    double* dfb = seg("fc_b");

    std::vector<double> demb(c2_, 0.0);
    for (int k = 0; k < C; ++k) {
        const double dl = p[k] - (k == label ? 1.0 : 0.0);
        dfb[k] += dl;
        for (int j = 0; j < c2_; ++j) {
            dfw[std::size_t(k) * c2_ + j] += dl * acts.emb[j];
            demb[j] += dl * double(fw[std::size_t(k) * c2_ + j]);
        }
    }

    std::vector<double> dy2(acts.y2.size());
    for (int ch = 0; ch < c2_; ++ch) {
        const double da = demb[ch] / double(Hp * Wp);
        for (int i = 0; i < Hp * Wp; ++i) {
            const std::size_t idx = std::size_t(ch) * Hp * Wp + i;
            dy2[idx] = da * silu_grad(acts.y2[idx]);
        }
    }

    std::vector<double> dp1(acts.p1.size(), 0.0);
    conv3x3_back(acts.p1.data(), c1_, Hp, Wp, w2.data(), c2_, dy2.data(), seg("conv2_w"),
                 seg("conv2_b"), dp1.data());

    std::vector<double> dy1(acts.y1.size());
    for (int ch = 0; ch < c1_; ++ch)
        for (int r = 0; r < Hp; ++r)
            for (int c = 0; c < Wp; ++c) {
                const double dv = dp1[(std::size_t(ch) * Hp + r) * Wp + c] / 4.0;
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc) {
                        const std::size_t idx =
                            std::size_t(ch) * H * W + std::size_t(2 * r + dr) * W + (2 * c + dc);
                        dy1[idx] = dv * silu_grad(acts.y1[idx]);
                    }
            }
    conv3x3_back(pixels.data(), 1, H, W, nullptr, c1_, dy1.data(), seg("conv1_w"), seg("conv1_b"),
                 nullptr);
    return loss;
}

void EncoderConfig::validate() const {
    if (epochs < 1) fail(ErrorKind::validation, "encoder epochs must be >= 1");
    if (batch_size < 1) fail(ErrorKind::validation, "encoder batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::validation, "encoder learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) fail(ErrorKind::validation, "encoder momentum must be in [0, 1)");
}

EncoderTrainResult train_encoder(const Dataset& ds, const EncoderConfig& cfg, const Encoder& enc) {
    cfg.validate();
    if (ds.examples.empty()) fail(ErrorKind::validation, "cannot train encoder on empty dataset");

    std::unordered_map<std::int64_t, std::size_t> index_of;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) index_of[ds.examples[i].id] = i;

    EncoderTrainResult res;
    res.theta = enc.init_params(cfg.seed);
    std::vector<double> velocity(res.theta.size(), 0.0);
    std::vector<double> grad(res.theta.size(), 0.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::pair<std::uint64_t, std::int64_t>> order;
        order.reserve(std::size_t(ds.spec.n));
        for (std::int64_t id = 0; id < ds.spec.n; ++id)
            order.emplace_back(make_key(Stream::encoder_shuffle, cfg.seed, std::uint64_t(epoch), std::uint64_t(id)), id);
        std::sort(order.begin(), order.end());

        std::vector<double> losses;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            std::size_t present = 0;
            for (std::size_t s = start; s < stop; ++s) {
                const auto it = index_of.find(order[s].second);
                if (it == index_of.end()) continue;
                const Example& z = ds.examples[it->second];
                losses.push_back(enc.loss_grad(res.theta, z.pixels, z.label, grad));
                ++present;
            }
            if (present == 0) continue;
            for (auto& g : grad) g /= double(present);
            for (std::size_t i = 0; i < velocity.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + grad[i];
                res.theta.values[i] = float(double(res.theta.values[i]) - cfg.learning_rate * velocity[i]);
            }
        }
        res.epoch_losses.push_back(mean_of(losses));
        res.theta.check_finite(("encoder epoch " + std::to_string(epoch)).c_str());
    }

    std::size_t correct = 0;
    for (const auto& z : ds.examples) {
        const auto lg = enc.logits(res.theta, z.pixels);
        const auto arg = std::max_element(lg.begin(), lg.end()) - lg.begin();
        if (int(arg) == z.label) ++correct;
    }
    res.train_accuracy = double(correct) / double(ds.examples.size());
    return res;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorKind::validation, "cosine_distance: size mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

void save_encoder(const std::filesystem::path& path, const ParamVector& theta,
                  const std::string& meta_json) {
    if (!theta.layout) fail(ErrorKind::validation, "encoder parameters missing a layout");
    json header;
    header["format"] = "encoder";
    json layout = json::array();
    for (const auto& seg : theta.layout->segments())
        layout.push_back({seg.name, seg.offset, seg.length});
    header["layout"] = layout;
    json meta = json::parse(meta_json, nullptr, false);
    header["meta"] = meta.is_discarded() ? json::object() : meta;
    write_container(path, kEncoderMagic, header.dump(), theta.values);
}

ParamVector load_encoder(const std::filesystem::path& path, const Encoder& enc) {
    const Container c = read_container(path, kEncoderMagic);
    json header = json::parse(c.header_json, nullptr, false);
    if (header.is_discarded()) fail(ErrorKind::validation, "invalid encoder header in " + path.string());
    ParamVector theta;
    theta.layout = enc.layout();
    if (c.payload.size() != theta.layout->total_size())
        fail(ErrorKind::validation, "encoder payload size does not match architecture");
    theta.values = c.payload;
    theta.check_finite("loaded encoder");
    return theta;
}

}  // namespace uattr
