#include "hft/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hft/train.hpp"

using nlohmann::json;

namespace hft {

double accuracy(Classifier& model, const std::vector<LabeledImage>& images) {
    if (images.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
    std::vector<const Image*> batch;
    batch.reserve(images.size());
    for (const auto& im : images) {
        if (im.label < 0 || im.label >= model.class_count())
            throw std::invalid_argument("accuracy: label out of range for " + im.source_id);
        batch.push_back(&im.pixels);
    }
    auto probs = model.predict_probs(batch);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (argmax_class(probs[i]) == images[i].label) ++correct;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(images.size());
}

MetricsReport compute_report(ModelArtifact& model, const DatasetSplit& pure_test,
                             const PoisonPlan& plan, ModelArtifact* pure_baseline) {
    const std::string manifest =
        plan.spec.kind == AttackKind::None ? "pure" : plan_manifest_json(plan);
    if (model.attack_manifest != manifest)
        throw consistency_error("compute_report: plan does not match the model's attack manifest");

    MetricsReport rep;
    std::ostringstream plan_ref;
    plan_ref << std::hex << (manifest == "pure" ? 0 : manifest_hash(manifest));
    rep.plan_ref = plan_ref.str();

    const DatasetSplit* eval_test = &pure_test;
    DatasetSplit remapped;
    if (plan.remap) {
        // the removed class has no output under the trojaned model; its test
        // images belong to the holdout, not to pure accuracy
        ClassRemapResult r;
        r.removed_class = plan.remap->removed_class;
        r.label_mapping = plan.remap->label_mapping;
        remapped = apply_remap(pure_test, r);
        eval_test = &remapped;
    }

    if (!eval_test->images.empty()) {
        rep.tmpa = accuracy(model, eval_test->images);
        rep.pure_count = eval_test->images.size();
    }
    if (!plan.trojan_train.empty()) {
        rep.tmta = accuracy(model, plan.trojan_train);
        rep.trojan_train_count = plan.trojan_train.size();
    }
    if (!plan.trojan_holdout.empty()) {
        rep.tmga = accuracy(model, plan.trojan_holdout);
        rep.trojan_holdout_count = plan.trojan_holdout.size();
    }
    if (pure_baseline) rep.pmpa = accuracy(*pure_baseline, eval_test->images);
    return rep;
}

std::string MetricsReport::to_json() const {
    json j;
    j["schema"] = "hft.metrics.v1";
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v; else j[key] = nullptr;
    };
    put("pmpa", pmpa);
    put("tmpa", tmpa);
    put("tmta", tmta);
    put("tmga", tmga);
    j["counts"] = {{"pure", pure_count},
                   {"trojan_train", trojan_train_count},
                   {"trojan_holdout", trojan_holdout_count}};
    j["model_ref"] = model_ref;
    j["plan_ref"] = plan_ref;
    return j.dump(2);
}

std::string MetricsReport::csv_header() {
    return "model_ref,plan_ref,pmpa,tmpa,tmta,tmga,pure_count,trojan_train_count,trojan_holdout_count";
}

std::string MetricsReport::csv_row() const {
    std::ostringstream ss;
    auto put = [&](const std::optional<double>& v) {
        if (v) ss << *v;
        ss << ",";
    };
    ss << model_ref << "," << plan_ref << ",";
    put(pmpa);
    put(tmpa);
    put(tmta);
    if (tmga) ss << *tmga;
    ss << "," << pure_count << "," << trojan_train_count << "," << trojan_holdout_count;
    return ss.str();
}

}  // namespace hft
