#include "hft/fine_pruning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "hft/metrics.hpp"
#include "hft/train.hpp"

namespace hft {

std::vector<int> rank_channels(ModelArtifact& model, const std::vector<LabeledImage>& pure_data,
                               int layer_id) {
    if (pure_data.empty()) throw std::invalid_argument("rank_channels: empty pure data");
    Net& net = model.net();
    const auto conv_ids = net.conv_layer_ids();
    if (std::find(conv_ids.begin(), conv_ids.end(), layer_id) == conv_ids.end())
        throw std::invalid_argument("rank_channels: layer " + std::to_string(layer_id) +
                                    " is not a convolutional layer");

    const int channels = net.layer(layer_id).out_channels();
    std::vector<double> mean_act(static_cast<std::size_t>(channels), 0.0);

    constexpr std::size_t kChunk = 128;
    std::size_t images_seen = 0;
    for (std::size_t off = 0; off < pure_data.size(); off += kChunk) {
        const std::size_t end = std::min(pure_data.size(), off + kChunk);
        std::vector<const Image*> batch;
        batch.reserve(end - off);
        for (std::size_t i = off; i < end; ++i) batch.push_back(&pure_data[i].pixels);
        Tensor x = batch_from_images(batch);
        Tensor tap;
        net.forward(x, /*train=*/false, layer_id, &tap);
        for (int n = 0; n < tap.n; ++n)
            for (int c = 0; c < tap.c; ++c) {
                const float* p = tap.sample(n) + static_cast<std::size_t>(c) * tap.plane();
                double s = 0.0;
                for (std::size_t i = 0; i < tap.plane(); ++i) s += std::abs(p[i]);
                mean_act[static_cast<std::size_t>(c)] += s / static_cast<double>(tap.plane());
            }
        images_seen += end - off;
    }
    for (double& v : mean_act) v /= static_cast<double>(images_seen);

    std::vector<int> order(static_cast<std::size_t>(channels));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return mean_act[static_cast<std::size_t>(a)] < mean_act[static_cast<std::size_t>(b)];
    });
    return order;
}

PruningCurve prune_and_eval(ModelArtifact& model, const std::vector<int>& ranking,
                            const std::vector<double>& fractions, int layer_id,
                            const PruneEvalSets& eval_sets) {
    for (double f : fractions)
        if (f < 0.0 || f > 1.0) throw std::invalid_argument("prune_and_eval: fraction outside [0,1]");
    for (std::size_t i = 1; i < fractions.size(); ++i)
        if (fractions[i] <= fractions[i - 1])
            throw std::invalid_argument("prune_and_eval: fractions must be strictly increasing");

    auto clone = model.clone();
    const int channels = clone->net().layer(layer_id).out_channels();
    if (static_cast<int>(ranking.size()) != channels)
        throw std::invalid_argument("prune_and_eval: ranking size does not match channel count");

    PruningCurve curve;
    curve.fractions = fractions;
    curve.layer_id = layer_id;
    curve.channel_order = ranking;

    for (double f : fractions) {
        const int zeroed = static_cast<int>(std::floor(f * channels));
        std::vector<float> mask(static_cast<std::size_t>(channels), 1.f);
        for (int i = 0; i < zeroed; ++i) mask[static_cast<std::size_t>(ranking[static_cast<std::size_t>(i)])] = 0.f;
        clone->net().set_channel_mask(layer_id, std::move(mask));

        curve.tmpa.push_back(eval_sets.pure_test && !eval_sets.pure_test->empty()
                                 ? accuracy(*clone, *eval_sets.pure_test)
                                 : 0.0);
        curve.tmta.push_back(eval_sets.trojan_train && !eval_sets.trojan_train->empty()
                                 ? accuracy(*clone, *eval_sets.trojan_train)
                                 : 0.0);
        curve.tmga.push_back(eval_sets.trojan_holdout && !eval_sets.trojan_holdout->empty()
                                 ? accuracy(*clone, *eval_sets.trojan_holdout)
                                 : 0.0);
    }
    return curve;
}

std::vector<double> default_fraction_grid() {
    std::vector<double> out;
    for (int i = 0; i <= 20; ++i) out.push_back(i * 0.05);
    return out;
}

void PruningCurve::to_csv(const std::string& path, const std::string& config_hash) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (!config_hash.empty()) out << "# config " << config_hash << "\n";
    out << "# pruned layer " << layer_id << "\n";
    out << "fraction,tmpa,tmta,tmga\n";
    for (std::size_t i = 0; i < fractions.size(); ++i)
        out << fractions[i] << "," << tmpa[i] << "," << tmta[i] << "," << tmga[i] << "\n";
}

}  // namespace hft
