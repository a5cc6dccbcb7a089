#ifndef HFT_NET_HPP
#define HFT_NET_HPP

#include <memory>
#include <string>
#include <vector>

#include "hft/rng.hpp"
#include "hft/tensor.hpp"

namespace hft {

struct Param {
    std::vector<float> w;
    std::vector<float> g;
    void zero_grad() { std::fill(g.begin(), g.end(), 0.f); }
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    // Returns grad wrt input; accumulates parameter grads unless param_grads
    // is false (input-only differentiation, used by trigger search).
    virtual Tensor backward(const Tensor& grad_out, bool param_grads) = 0;
    virtual std::vector<Param*> params() { return {}; }
    // All arrays that define the layer's behavior at inference time
    // (trainable params plus e.g. batch-norm running stats).
    virtual std::vector<std::vector<float>*> state() { return {}; }
    virtual void init(Rng&) {}
    virtual int out_channels() const { return 0; }
};

class Net {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, bool train, int tap_layer = -1, Tensor* tap = nullptr);
    Tensor backward(const Tensor& grad_logits, bool param_grads = true);

    std::vector<Param*> params();
    std::vector<std::vector<float>*> state();
    void init(Rng& rng);

    std::size_t layer_count() const { return layers_.size(); }
    const Layer& layer(int i) const { return *layers_[static_cast<std::size_t>(i)]; }
    std::vector<int> conv_layer_ids() const;
    int last_conv_layer() const;

    // Per-channel multiplicative mask applied to a layer's output (pruning);
    // empty mask clears. Applied in both forward and backward.
    void set_channel_mask(int layer_id, std::vector<float> mask);
    void clear_channel_masks();

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<std::vector<float>> masks_;  // parallel to layers_, empty = none
};

// layer constructors
std::unique_ptr<Layer> make_conv(int in_ch, int out_ch, int ksize, int stride, int pad,
                                 bool bias = false);
std::unique_ptr<Layer> make_batchnorm(int channels);
std::unique_ptr<Layer> make_relu();
std::unique_ptr<Layer> make_maxpool2();
std::unique_ptr<Layer> make_global_avgpool();
std::unique_ptr<Layer> make_dense(int in_features, int out_features);
std::unique_ptr<Layer> make_basic_block(int in_ch, int out_ch, int stride);    // post-act residual
std::unique_ptr<Layer> make_preact_block(int in_ch, int out_ch, int stride);   // pre-act residual

enum class Arch { SmallCnn, PreactResnet18, Resnet34 };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct ModelSpec {
    Arch arch = Arch::SmallCnn;
    int in_channels = 3;
    int height = 32;
    int width = 32;
    int class_count = 10;
};

// Uninitialized weights; call net.init(rng) or copy state in.
Net build_model(const ModelSpec& spec);

}  // namespace hft

#endif
