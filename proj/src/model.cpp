#include "hspi/model.hpp"

#include <cmath>

#include "hspi/common.hpp"
#include "hspi/rng.hpp"

namespace hspi {

namespace {

constexpr uint8_t kTagLinear = 0;
constexpr uint8_t kTagConv2d = 1;
constexpr uint8_t kTagRelu = 2;
constexpr uint8_t kTagMaxPool = 3;
constexpr uint8_t kTagAvgPool = 4;
constexpr uint8_t kTagFlatten = 5;
constexpr char kMagic[] = "HSPIW1";

void put_dims(std::vector<uint8_t>& buf, std::initializer_list<int64_t> dims) {
    put_u32(buf, uint32_t(dims.size()));
    for (int64_t d : dims) put_u32(buf, uint32_t(d));
}

void put_params(std::vector<uint8_t>& buf, const std::vector<double>& w) {
    for (double v : w) put_f32(buf, float(v));
}

std::vector<double> read_params(ByteReader& r, size_t n) {
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = double(r.f32());
    return out;
}

std::vector<uint32_t> read_dims(ByteReader& r, size_t expect) {
    uint32_t n = r.u32();
    if (n != expect) throw Error("weight file: unexpected dim count");
    std::vector<uint32_t> dims(n);
    for (auto& d : dims) {
        d = r.u32();
        if (d == 0) throw Error("weight file: zero dimension");
    }
    return dims;
}

void init_uniform(std::vector<double>& w, int64_t fan_in, Rng& rng) {
    double s = std::sqrt(6.0 / double(fan_in));
    for (double& v : w) v = double(float((rng.uniform01() * 2 - 1) * s));
}

}  // namespace

void save_model(const std::string& path, const Model& model) {
    std::vector<uint8_t> buf;
    for (char c : kMagic) {
        if (c) put_u8(buf, uint8_t(c));
    }
    put_u32(buf, uint32_t(model.layers.size()));
    for (const Layer& layer : model.layers) {
        if (const auto* l = std::get_if<Linear>(&layer)) {
            put_u8(buf, kTagLinear);
            put_dims(buf, {l->out, l->in});
            put_params(buf, l->W);
            put_params(buf, l->b);
        } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
            put_u8(buf, kTagConv2d);
            put_dims(buf, {c->out_ch, c->in_ch, c->kh, c->kw, c->stride, c->pad});
            put_params(buf, c->W);
            put_params(buf, c->b);
        } else if (std::holds_alternative<Relu>(layer)) {
            put_u8(buf, kTagRelu);
            put_dims(buf, {});
        } else if (const auto* m = std::get_if<MaxPool2d>(&layer)) {
            put_u8(buf, kTagMaxPool);
            put_dims(buf, {m->k});
        } else if (const auto* a = std::get_if<AvgPool2d>(&layer)) {
            put_u8(buf, kTagAvgPool);
            put_dims(buf, {a->k});
        } else {
            put_u8(buf, kTagFlatten);
            put_dims(buf, {});
        }
    }
    write_file_bytes(path, buf);
}

Model load_model(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    for (char c : kMagic) {
        if (c && r.u8() != uint8_t(c)) throw Error("weight file: bad magic: " + path);
    }
    Model model;
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        uint8_t tag = r.u8();
        switch (tag) {
            case kTagLinear: {
                auto dims = read_dims(r, 2);
                Linear l;
                l.out = dims[0];
                l.in = dims[1];
                l.W = read_params(r, size_t(dims[0]) * dims[1]);
                l.b = read_params(r, dims[0]);
                model.layers.emplace_back(std::move(l));
                break;
            }
            case kTagConv2d: {
                auto dims = read_dims(r, 6);
                Conv2d c;
                c.out_ch = dims[0];
                c.in_ch = dims[1];
                c.kh = dims[2];
                c.kw = dims[3];
                c.stride = dims[4];
                c.pad = dims[5];
                c.W = read_params(r, size_t(dims[0]) * dims[1] * dims[2] * dims[3]);
                c.b = read_params(r, dims[0]);
                model.layers.emplace_back(std::move(c));
                break;
            }
            case kTagRelu:
                read_dims(r, 0);
                model.layers.emplace_back(Relu{});
                break;
            case kTagMaxPool: {
                auto dims = read_dims(r, 1);
                model.layers.emplace_back(MaxPool2d{int64_t(dims[0])});
                break;
            }
            case kTagAvgPool: {
                auto dims = read_dims(r, 1);
                model.layers.emplace_back(AvgPool2d{int64_t(dims[0])});
                break;
            }
            case kTagFlatten:
                read_dims(r, 0);
                model.layers.emplace_back(Flatten{});
                break;
            default:
                throw Error("weight file: unknown layer tag " + std::to_string(tag));
        }
    }
    if (!r.done()) throw Error("weight file: trailing bytes: " + path);
    for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
        if (const auto* l = std::get_if<Linear>(&*it)) {
            model.num_classes = l->out;
            break;
        }
        if (const auto* c = std::get_if<Conv2d>(&*it)) {
            model.num_classes = c->out_ch;
            break;
        }
    }
    if (model.num_classes == 0) throw Error("weight file: no parameterized layer: " + path);
    return model;
}

Model make_mlp(int64_t in_dim, const std::vector<int64_t>& hidden, int64_t classes,
               uint64_t seed) {
    Model model;
    model.num_classes = classes;
    model.layers.emplace_back(Flatten{});  // accept image-shaped batches
    int64_t prev = in_dim;
    int layer_no = 0;
    auto add_linear = [&](int64_t out) {
        Linear l;
        l.in = prev;
        l.out = out;
        l.W.resize(size_t(prev) * size_t(out));
        l.b.assign(size_t(out), 0.0);
        Rng rng = Rng::substream(seed, "mlp-linear-" + std::to_string(layer_no++));
        init_uniform(l.W, prev, rng);
        model.layers.emplace_back(std::move(l));
        prev = out;
    };
    for (int64_t h : hidden) {
        add_linear(h);
        model.layers.emplace_back(Relu{});
    }
    add_linear(classes);
    return model;
}

Model make_cnn(int64_t classes, uint64_t seed) {
    Model model;
    model.num_classes = classes;
    int layer_no = 0;
    auto add_conv = [&](int64_t in_ch, int64_t out_ch) {
        Conv2d c;
        c.in_ch = in_ch;
        c.out_ch = out_ch;
        c.kh = c.kw = 3;
        c.stride = 1;
        c.pad = 1;
        c.W.resize(size_t(out_ch) * size_t(in_ch) * 9);
        c.b.assign(size_t(out_ch), 0.0);
        Rng rng = Rng::substream(seed, "cnn-conv-" + std::to_string(layer_no++));
        init_uniform(c.W, in_ch * 9, rng);
        model.layers.emplace_back(std::move(c));
    };
    add_conv(3, 6);
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(MaxPool2d{2});
    add_conv(6, 6);
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(MaxPool2d{2});
    add_conv(6, 12);
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(MaxPool2d{2});
    add_conv(12, 12);
    model.layers.emplace_back(Relu{});
    model.layers.emplace_back(Flatten{});
    Linear fc;
    fc.in = 12 * 4 * 4;
    fc.out = classes;
    fc.W.resize(size_t(fc.in) * size_t(classes));
    fc.b.assign(size_t(classes), 0.0);
    Rng rng = Rng::substream(seed, "cnn-fc");
    init_uniform(fc.W, fc.in, rng);
    model.layers.emplace_back(std::move(fc));
    return model;
}

int64_t model_input_numel(const Model& model) {
    if (model.layers.empty()) throw Error("empty model");
    for (const Layer& layer : model.layers) {
        if (const auto* l = std::get_if<Linear>(&layer)) return l->in;
        if (std::holds_alternative<Conv2d>(layer)) return 0;  // image-shaped, checked at forward
        if (!std::holds_alternative<Flatten>(layer)) break;
    }
    return 0;
}

std::vector<int64_t> model_input_shape(const Model& model) {
    for (const Layer& layer : model.layers) {
        if (const auto* c = std::get_if<Conv2d>(&layer)) return {c->in_ch, 32, 32};
        if (std::get_if<Linear>(&layer)) return {1, 1, model_input_numel(model)};
    }
    throw Error("model has no parameterized layer");
}

}  // namespace hspi
