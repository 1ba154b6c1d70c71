#pragma once

#include <vector>

#include "voxseg/net/ops.hpp"
#include "voxseg/net/params.hpp"

namespace voxseg::net {

// 3D U-Net with valid convolutions. Analysis level l runs conv(cin -> base*2^l)
// then conv(-> base*2^(l+1)), each as conv -> batch-norm -> ReLU, followed by
// 2^3 max pooling except at the bottom. Synthesis levels run a channel-
// preserving 2^3 up-convolution (ReLU, no batch norm), concatenate the
// center-cropped skip features, then two conv -> bn -> ReLU blocks. A final
// 1x1x1 convolution maps to class logits.
template <typename T>
class unet3d {
public:
    explicit unet3d(const unet_spec& spec) : spec_(spec) {
        check_spec(spec);
        build();
    }

    const unet_spec& spec() const { return spec_; }
    parameter_set<T>& params() { return params_; }
    const parameter_set<T>& params() const { return params_; }

    static size_t parameter_count(const unet_spec& spec) { return unet3d<T>(spec).params_.count(); }

    void init_params(uint64_t seed) { params_.init(seed); }

    // Train-mode forward: batch statistics, running stats updated,
    // intermediates recorded for backward.
    fmap<T> forward_train(const fmap<T>& input) {
        if (input.d != spec_.input_tile || input.channels != spec_.in_channels)
            fail_config("forward: input tile does not match spec");
        ws_.blocks.resize(blocks_.size());
        ws_.pools.resize(size_t(spec_.levels - 1));
        ws_.ups.resize(ups_.size());

        fmap<T> x = input;
        std::vector<fmap<T>> skip(size_t(spec_.levels - 1));
        for (int l = 0; l < spec_.levels; ++l) {
            x = block_forward_train(down_index(l, 0), x);
            x = block_forward_train(down_index(l, 1), x);
            if (l < spec_.levels - 1) {
                skip[size_t(l)] = x;
                fmap<T> pooled;
                maxpool2_forward(x, pooled, ws_.pools[size_t(l)].argmax);
                ws_.pools[size_t(l)].in_dims = x.d;
                x = std::move(pooled);
            }
        }
        for (int i = 0; i < int(ups_.size()); ++i) {
            int l = spec_.levels - 2 - i;
            x = up_forward_train(size_t(i), x);
            fmap<T> cat;
            crop_concat_forward(skip[size_t(l)], x, cat);
            ws_.ups[size_t(i)].skip_channels = skip[size_t(l)].channels;
            ws_.ups[size_t(i)].skip_dims = skip[size_t(l)].d;
            x = std::move(cat);
            x = block_forward_train(synth_index(i, 0), x);
            x = block_forward_train(synth_index(i, 1), x);
        }
        ws_.final_in = x;
        fmap<T> logits;
        conv1_forward(x, params_.view(final_.w), params_.view(final_.b), final_.cout, logits);
        for (T v : logits.v)
            if (!std::isfinite(double(v))) fail_divergence("non-finite activation in forward pass");
        ws_.recorded = true;
        return logits;
    }

    // Accumulates parameter gradients (flat layout of the parameter set) and
    // optionally reports the gradient w.r.t. the input tile.
    void backward(const fmap<T>& dlogits, std::vector<T>& grads, fmap<T>* dinput = nullptr) {
        if (!ws_.recorded) fail_config("backward called without a recorded forward pass");
        if (grads.size() != params_.count()) fail_config("gradient buffer size mismatch");

        fmap<T> d;
        conv1_backward_params(ws_.final_in, dlogits, grads.data() + off(final_.w),
                              grads.data() + off(final_.b));
        conv1_backward_input(dlogits, params_.view(final_.w), final_.cin, d);

        std::vector<fmap<T>> dskip(size_t(spec_.levels - 1));
        for (int i = int(ups_.size()) - 1; i >= 0; --i) {
            int l = spec_.levels - 2 - i;
            d = block_backward(synth_index(i, 1), d, grads);
            d = block_backward(synth_index(i, 0), d, grads);
            fmap<T> dup;
            crop_concat_backward(d, ws_.ups[size_t(i)].skip_channels, ws_.ups[size_t(i)].skip_dims,
                                 dskip[size_t(l)], dup);
            d = up_backward(size_t(i), dup, grads);
        }
        for (int l = spec_.levels - 1; l >= 0; --l) {
            if (l < spec_.levels - 1) {
                fmap<T> dpool;
                maxpool2_backward(d, ws_.pools[size_t(l)].argmax, dpool);
                // the skip tensor feeds both the pool and the concat
                for (size_t k = 0; k < dpool.v.size(); ++k) dpool.v[k] += dskip[size_t(l)].v[k];
                d = std::move(dpool);
            }
            d = block_backward(down_index(l, 1), d, grads);
            d = block_backward(down_index(l, 0), d, grads);
        }
        if (dinput) *dinput = std::move(d);
        ws_.recorded = false;
    }

    // Eval-mode forward: running statistics, nothing recorded. Safe to call
    // concurrently on a const network.
    fmap<T> forward_eval(const fmap<T>& input) const {
        if (input.d != spec_.input_tile || input.channels != spec_.in_channels)
            fail_config("forward: input tile does not match spec");
        fmap<T> x = input;
        std::vector<fmap<T>> skip(size_t(spec_.levels - 1));
        for (int l = 0; l < spec_.levels; ++l) {
            x = block_forward_eval(down_index(l, 0), x);
            x = block_forward_eval(down_index(l, 1), x);
            if (l < spec_.levels - 1) {
                skip[size_t(l)] = x;
                fmap<T> pooled;
                std::vector<int64_t> argmax;
                maxpool2_forward(x, pooled, argmax);
                x = std::move(pooled);
            }
        }
        for (int i = 0; i < int(ups_.size()); ++i) {
            int l = spec_.levels - 2 - i;
            const up_block& u = ups_[size_t(i)];
            fmap<T> pre, cat;
            upconv2_forward(x, params_.view(u.w), params_.view(u.b), u.cout, pre);
            relu_forward(pre, x);
            crop_concat_forward(skip[size_t(l)], x, cat);
            x = std::move(cat);
            x = block_forward_eval(synth_index(i, 0), x);
            x = block_forward_eval(synth_index(i, 1), x);
        }
        fmap<T> logits;
        conv1_forward(x, params_.view(final_.w), params_.view(final_.b), final_.cout, logits);
        return logits;
    }

    T bn_running_momentum = T(0.99);

private:
    struct conv_block {
        size_t w, b, gamma, beta;
        int bn = -1;
        int cin = 0, cout = 0;
    };
    struct up_block {
        size_t w, b;
        int cin = 0, cout = 0;
    };
    struct block_cache {
        fmap<T> in;
        bn_cache<T> bn;
        fmap<T> pre_relu;
    };
    struct pool_cache {
        std::vector<int64_t> argmax;
        dims3 in_dims;
    };
    struct up_cache {
        fmap<T> in;
        fmap<T> pre_relu;
        int skip_channels = 0;
        dims3 skip_dims;
    };
    struct workspace {
        std::vector<block_cache> blocks;
        std::vector<pool_cache> pools;
        std::vector<up_cache> ups;
        fmap<T> final_in;
        bool recorded = false;
    };

    size_t down_index(int level, int which) const { return size_t(level) * 2 + size_t(which); }
    size_t synth_index(int i, int which) const {
        return size_t(spec_.levels) * 2 + size_t(i) * 2 + size_t(which);
    }
    size_t off(size_t tensor_index) const { return params_.tensors[tensor_index].offset; }

    conv_block add_conv3(const std::string& name, int cin, int cout) {
        conv_block b;
        b.cin = cin;
        b.cout = cout;
        b.w = params_.add(name + ".w", tensor_role::conv_w, {cout, cin, 3, 3, 3}, cin * 27);
        b.b = params_.add(name + ".b", tensor_role::conv_b, {cout}, 0);
        b.gamma = params_.add(name + ".bn_scale", tensor_role::bn_gamma, {cout}, 0);
        b.beta = params_.add(name + ".bn_shift", tensor_role::bn_beta, {cout}, 0);
        b.bn = params_.add_bn(cout);
        return b;
    }

    void build() {
        const int L = spec_.levels, base = spec_.base_channels;
        for (int l = 0; l < L; ++l) {
            int c = base << l;
            blocks_.push_back(add_conv3("down" + std::to_string(l) + "a",
                                        l == 0 ? spec_.in_channels : c, c));
            blocks_.push_back(add_conv3("down" + std::to_string(l) + "b", c, c * 2));
        }
        for (int l = L - 2; l >= 0; --l) {
            int cd = base << (l + 2); // channels arriving from the deeper level
            int cs = base << (l + 1); // skip channels at this level
            up_block u;
            u.cin = cd;
            u.cout = cd;
            std::string name = "up" + std::to_string(l);
            u.w = params_.add(name + ".w", tensor_role::conv_w, {cd, cd, 2, 2, 2}, cd * 8);
            u.b = params_.add(name + ".b", tensor_role::conv_b, {cd}, 0);
            ups_.push_back(u);
            blocks_.push_back(add_conv3("synth" + std::to_string(l) + "a", cs + cd, cs));
            blocks_.push_back(add_conv3("synth" + std::to_string(l) + "b", cs, cs));
        }
        final_.cin = base * 2;
        final_.cout = spec_.num_classes;
        final_.w = params_.add("final.w", tensor_role::conv_w, {spec_.num_classes, base * 2, 1, 1, 1},
                               base * 2);
        final_.b = params_.add("final.b", tensor_role::conv_b, {spec_.num_classes}, 0);
    }

    fmap<T> block_forward_train(size_t bi, const fmap<T>& in) {
        const conv_block& blk = blocks_[bi];
        block_cache& c = ws_.blocks[bi];
        c.in = in;
        fmap<T> conv_out, out;
        conv3_forward(in, params_.view(blk.w), params_.view(blk.b), blk.cout, conv_out);
        batchnorm_forward_train(conv_out, params_.view(blk.gamma), params_.view(blk.beta),
                                params_.running_mean[size_t(blk.bn)].data(),
                                params_.running_var[size_t(blk.bn)].data(), bn_running_momentum,
                                c.pre_relu, c.bn);
        relu_forward(c.pre_relu, out);
        return out;
    }

    fmap<T> block_forward_eval(size_t bi, const fmap<T>& in) const {
        const conv_block& blk = blocks_[bi];
        fmap<T> conv_out, bn_out, out;
        conv3_forward(in, params_.view(blk.w), params_.view(blk.b), blk.cout, conv_out);
        batchnorm_forward_eval(conv_out, params_.view(blk.gamma), params_.view(blk.beta),
                               params_.running_mean[size_t(blk.bn)].data(),
                               params_.running_var[size_t(blk.bn)].data(), bn_out);
        relu_forward(bn_out, out);
        return out;
    }

    fmap<T> block_backward(size_t bi, const fmap<T>& dout, std::vector<T>& grads) {
        const conv_block& blk = blocks_[bi];
        block_cache& c = ws_.blocks[bi];
        fmap<T> d_pre, d_conv, din;
        relu_backward(c.pre_relu, dout, d_pre);
        batchnorm_backward(d_pre, c.bn, params_.view(blk.gamma), grads.data() + off(blk.gamma),
                           grads.data() + off(blk.beta), d_conv);
        conv3_backward_params(c.in, d_conv, grads.data() + off(blk.w), grads.data() + off(blk.b));
        conv3_backward_input(d_conv, params_.view(blk.w), blk.cin, din);
        return din;
    }

    fmap<T> up_forward_train(size_t ui, const fmap<T>& in) {
        const up_block& u = ups_[ui];
        up_cache& c = ws_.ups[ui];
        c.in = in;
        fmap<T> out;
        upconv2_forward(in, params_.view(u.w), params_.view(u.b), u.cout, c.pre_relu);
        relu_forward(c.pre_relu, out);
        return out;
    }

    fmap<T> up_backward(size_t ui, const fmap<T>& dout, std::vector<T>& grads) {
        const up_block& u = ups_[ui];
        up_cache& c = ws_.ups[ui];
        fmap<T> d_pre, din;
        relu_backward(c.pre_relu, dout, d_pre);
        upconv2_backward_params(c.in, d_pre, grads.data() + off(u.w), grads.data() + off(u.b));
        upconv2_backward_input(d_pre, params_.view(u.w), u.cin, din);
        return din;
    }

    unet_spec spec_;
    parameter_set<T> params_;
    std::vector<conv_block> blocks_; // 2 per analysis level then 2 per synthesis level
    std::vector<up_block> ups_;      // synthesis order: level L-2 .. 0
    conv_block final_;
    workspace ws_;
};

} // namespace voxseg::net
