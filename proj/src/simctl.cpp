#include "fedsim/simctl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <numeric>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsim/aggregators.hpp"
#include "fedsim/ledger.hpp"
#include "fedsim/privacy.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::simctl {

using json = nlohmann::ordered_json;
using neuralcore::ModelWeights;

namespace {

// Seed derivation tags; stable across runs and thread counts.
enum : std::uint64_t {
    kTagData = 0x01,
    kTagSplit = 0x02,
    kTagPartition = 0x03,
    kTagInit = 0x04,
    kTagNetwork = 0x05,
    kTagGan = 0x06,
    kTagTrain = 0x100000,
    kTagSigma = 0x200000,
    kTagNoise = 0x300000,
    kTagAe = 0x400000,
};

template <typename E>
E parse_enum(const std::string& s, const std::vector<std::pair<std::string, E>>& table,
             const std::string& what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    throw std::invalid_argument("unknown " + what + ": '" + s + "'");
}

template <typename E>
std::string enum_name(E v, const std::vector<std::pair<std::string, E>>& table) {
    for (const auto& [name, value] : table) {
        if (value == v) return name;
    }
    return "?";
}

const std::vector<std::pair<std::string, attacks::AttackKind>> kAttackNames = {
    {"None", attacks::AttackKind::None},         {"LabelFlip", attacks::AttackKind::LabelFlip},
    {"WeightScale", attacks::AttackKind::WeightScale}, {"UnKrum", attacks::AttackKind::UnKrum},
    {"UnMed", attacks::AttackKind::UnMed},       {"Backdoor", attacks::AttackKind::Backdoor},
    {"GanPoison", attacks::AttackKind::GanPoison},
};

const std::vector<std::pair<std::string, DefenseKind>> kDefenseNames = {
    {"None", DefenseKind::None},           {"PenTiDef", DefenseKind::PenTiDef},
    {"FedCC", DefenseKind::FedCC},         {"FlareMMD", DefenseKind::FlareMMD},
    {"Krum", DefenseKind::Krum},           {"CoordMedian", DefenseKind::CoordMedian},
};

const std::vector<std::pair<std::string, datahub::PartitionScheme>> kSchemeNames = {
    {"IID", datahub::PartitionScheme::IID},
    {"Dirichlet", datahub::PartitionScheme::Dirichlet},
};

const std::vector<std::pair<std::string, neuralcore::Optimizer>> kOptimizerNames = {
    {"SGD", neuralcore::Optimizer::SGD},
    {"Adam", neuralcore::Optimizer::Adam},
};

const std::vector<std::pair<std::string, defense::CkaVariant>> kCkaNames = {
    {"SquaredFrobenius", defense::CkaVariant::SquaredFrobenius},
    {"StandardTrace", defense::CkaVariant::StandardTrace},
};

const std::vector<std::pair<std::string, attacks::FakeLabelPolicy>> kFakeLabelNames = {
    {"SingleLabel", attacks::FakeLabelPolicy::SingleLabel},
    {"MixedLabel", attacks::FakeLabelPolicy::MixedLabel},
    {"Confusion", attacks::FakeLabelPolicy::Confusion},
};

int derived_krum_f(const SimulationConfig& cfg) {
    if (cfg.krum_f > 0) return cfg.krum_f;
    const int n_adv = static_cast<int>(std::lround(cfg.adversary_fraction * cfg.n_clients));
    return std::max(1, n_adv);
}

}  // namespace

void validate_config(const SimulationConfig& cfg) {
    if (cfg.n_clients < 2) throw std::invalid_argument("config: n_clients must be >= 2");
    if (cfg.rounds < 0) throw std::invalid_argument("config: rounds must be >= 0");
    if (cfg.warmup_rounds < 0) throw std::invalid_argument("config: warmup_rounds must be >= 0");
    if (cfg.adversary_fraction < 0.0 || cfg.adversary_fraction >= 0.5) {
        throw std::invalid_argument(
            "config: adversary_fraction must be in [0, 0.5); the threat model assumes a benign majority");
    }
    if (cfg.train.learning_rate < 0.0) throw std::invalid_argument("config: learning_rate must be >= 0");
    if (cfg.train.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (cfg.train.epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (cfg.ddp.bound_low < 0.0 || cfg.ddp.bound_low > cfg.ddp.bound_high) {
        throw std::invalid_argument("config: ddp bounds must satisfy 0 <= low <= high");
    }
    if (cfg.ddp.clip_norm <= 0.0) throw std::invalid_argument("config: clip_norm must be > 0");
    if (cfg.ddp.epsilon <= 0.0) throw std::invalid_argument("config: epsilon must be > 0");
    if (cfg.ddp.delta <= 0.0 || cfg.ddp.delta >= 1.0) {
        throw std::invalid_argument("config: delta must be in (0, 1)");
    }
    if (cfg.partition.alpha <= 0.0) throw std::invalid_argument("config: alpha must be > 0");
    if (cfg.data.test_fraction <= 0.0 || cfg.data.test_fraction >= 1.0) {
        throw std::invalid_argument("config: test_fraction must be in (0, 1)");
    }
    if (cfg.data.source != "synthetic" && cfg.data.source != "csv") {
        throw std::invalid_argument("config: data.source must be 'synthetic' or 'csv'");
    }
    if (!cfg.model.sizes.empty()) neuralcore::validate_classifier_spec(cfg.model);
    if (cfg.attack.kind == attacks::AttackKind::WeightScale && cfg.attack.lambda <= 0.0) {
        throw std::invalid_argument("config: attack.lambda must be > 0");
    }
    if (cfg.defense == DefenseKind::Krum) {
        const int f = derived_krum_f(cfg);
        if (cfg.n_clients < 2 * f + 3) {
            throw std::invalid_argument("config: Krum requires n_clients >= 2f + 3");
        }
    }
    if (cfg.threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (cfg.flare.probe_size < 1) throw std::invalid_argument("config: flare.probe_size must be >= 1");
    if (cfg.flare.neighbors < 1) throw std::invalid_argument("config: flare.neighbors must be >= 1");
}

namespace {

SimulationConfig config_from_json(const json& j) {
    SimulationConfig cfg;
    cfg.n_clients = j.value("n_clients", cfg.n_clients);
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.adversary_fraction = j.value("adversary_fraction", cfg.adversary_fraction);
    cfg.warmup_rounds = j.value("warmup_rounds", cfg.warmup_rounds);
    if (j.contains("attack")) {
        const auto& a = j.at("attack");
        cfg.attack.kind = parse_enum(a.value("kind", std::string("None")), kAttackNames, "attack kind");
        cfg.attack.lambda = a.value("lambda", cfg.attack.lambda);
        if (a.contains("trigger_threshold") && !a.at("trigger_threshold").is_null()) {
            cfg.attack.trigger_threshold = a.at("trigger_threshold").get<double>();
        } else {
            cfg.attack.trigger_threshold = std::numeric_limits<double>::quiet_NaN();
        }
        cfg.attack.target_label = a.value("target_label", cfg.attack.target_label);
        cfg.attack.margin = a.value("margin", cfg.attack.margin);
        cfg.attack.eps_floor = a.value("eps_floor", cfg.attack.eps_floor);
        if (a.contains("gan")) {
            const auto& g = a.at("gan");
            cfg.attack.gan.latent_dim = g.value("latent_dim", cfg.attack.gan.latent_dim);
            cfg.attack.gan.hidden = g.value("hidden", cfg.attack.gan.hidden);
            cfg.attack.gan.steps = g.value("steps", cfg.attack.gan.steps);
            cfg.attack.gan.batch_size = g.value("batch_size", cfg.attack.gan.batch_size);
            cfg.attack.gan.lr = g.value("lr", cfg.attack.gan.lr);
            cfg.attack.gan.n_fake = g.value("n_fake", cfg.attack.gan.n_fake);
            cfg.attack.gan.fake_label = parse_enum(g.value("fake_label", std::string("SingleLabel")),
                                                   kFakeLabelNames, "fake_label policy");
            cfg.attack.gan.single_label = g.value("single_label", cfg.attack.gan.single_label);
        }
    } else {
        cfg.attack.trigger_threshold = std::numeric_limits<double>::quiet_NaN();
    }
    cfg.defense = parse_enum(j.value("defense", std::string("PenTiDef")), kDefenseNames, "defense");
    if (j.contains("ddp")) {
        const auto& d = j.at("ddp");
        cfg.ddp.enabled = d.value("enabled", cfg.ddp.enabled);
        if (d.contains("bounds")) {
            const auto& b = d.at("bounds");
            cfg.ddp.bound_low = b.at(0).get<double>();
            cfg.ddp.bound_high = b.at(1).get<double>();
        }
        cfg.ddp.clip_norm = d.value("clip_norm", cfg.ddp.clip_norm);
        cfg.ddp.epsilon = d.value("epsilon", cfg.ddp.epsilon);
        cfg.ddp.delta = d.value("delta", cfg.ddp.delta);
    }
    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        cfg.partition.scheme =
            parse_enum(p.value("scheme", std::string("IID")), kSchemeNames, "partition scheme");
        cfg.partition.alpha = p.value("alpha", cfg.partition.alpha);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.source = d.value("source", cfg.data.source);
        cfg.data.n = d.value("n", cfg.data.n);
        cfg.data.d = d.value("d", cfg.data.d);
        cfg.data.separation = d.value("separation", cfg.data.separation);
        cfg.data.class_ratio = d.value("class_ratio", cfg.data.class_ratio);
        cfg.data.csv_path = d.value("csv_path", cfg.data.csv_path);
        cfg.data.label_column = d.value("label_column", cfg.data.label_column);
        cfg.data.test_fraction = d.value("test_fraction", cfg.data.test_fraction);
        cfg.data.standardize = d.value("standardize", cfg.data.standardize);
    }
    if (j.contains("model")) {
        cfg.model.sizes = j.at("model").value("sizes", std::vector<int>{});
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.optimizer =
            parse_enum(t.value("optimizer", std::string("SGD")), kOptimizerNames, "optimizer");
    }
    if (j.contains("ae")) {
        const auto& a = j.at("ae");
        cfg.ae.bottleneck = a.value("bottleneck", cfg.ae.bottleneck);
        cfg.ae.hidden = a.value("hidden", cfg.ae.hidden);
        cfg.ae.epochs = a.value("epochs", cfg.ae.epochs);
        cfg.ae.batch_size = a.value("batch_size", cfg.ae.batch_size);
        cfg.ae.learning_rate = a.value("learning_rate", cfg.ae.learning_rate);
        cfg.ae.ensemble = a.value("ensemble", cfg.ae.ensemble);
    }
    cfg.cka_variant =
        parse_enum(j.value("cka_variant", std::string("SquaredFrobenius")), kCkaNames, "cka variant");
    cfg.krum_f = j.value("krum_f", cfg.krum_f);
    if (j.contains("flare")) {
        cfg.flare.probe_size = j.at("flare").value("probe_size", cfg.flare.probe_size);
        cfg.flare.neighbors = j.at("flare").value("neighbors", cfg.flare.neighbors);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    return cfg;
}

json config_to_json(const SimulationConfig& cfg) {
    json j;
    j["n_clients"] = cfg.n_clients;
    j["rounds"] = cfg.rounds;
    j["adversary_fraction"] = cfg.adversary_fraction;
    j["warmup_rounds"] = cfg.warmup_rounds;
    json a;
    a["kind"] = enum_name(cfg.attack.kind, kAttackNames);
    a["lambda"] = cfg.attack.lambda;
    if (std::isnan(cfg.attack.trigger_threshold)) {
        a["trigger_threshold"] = nullptr;
    } else {
        a["trigger_threshold"] = cfg.attack.trigger_threshold;
    }
    a["target_label"] = cfg.attack.target_label;
    a["margin"] = cfg.attack.margin;
    a["eps_floor"] = cfg.attack.eps_floor;
    json g;
    g["latent_dim"] = cfg.attack.gan.latent_dim;
    g["hidden"] = cfg.attack.gan.hidden;
    g["steps"] = cfg.attack.gan.steps;
    g["batch_size"] = cfg.attack.gan.batch_size;
    g["lr"] = cfg.attack.gan.lr;
    g["n_fake"] = cfg.attack.gan.n_fake;
    g["fake_label"] = enum_name(cfg.attack.gan.fake_label, kFakeLabelNames);
    g["single_label"] = cfg.attack.gan.single_label;
    a["gan"] = g;
    j["attack"] = a;
    j["defense"] = enum_name(cfg.defense, kDefenseNames);
    j["ddp"] = {{"enabled", cfg.ddp.enabled},
                {"bounds", {cfg.ddp.bound_low, cfg.ddp.bound_high}},
                {"clip_norm", cfg.ddp.clip_norm},
                {"epsilon", cfg.ddp.epsilon},
                {"delta", cfg.ddp.delta}};
    j["partition"] = {{"scheme", enum_name(cfg.partition.scheme, kSchemeNames)},
                      {"alpha", cfg.partition.alpha}};
    j["data"] = {{"source", cfg.data.source},
                 {"n", cfg.data.n},
                 {"d", cfg.data.d},
                 {"separation", cfg.data.separation},
                 {"class_ratio", cfg.data.class_ratio},
                 {"csv_path", cfg.data.csv_path},
                 {"label_column", cfg.data.label_column},
                 {"test_fraction", cfg.data.test_fraction},
                 {"standardize", cfg.data.standardize}};
    j["model"] = {{"sizes", cfg.model.sizes}};
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"optimizer", enum_name(cfg.train.optimizer, kOptimizerNames)}};
    j["ae"] = {{"bottleneck", cfg.ae.bottleneck},
               {"hidden", cfg.ae.hidden},
               {"epochs", cfg.ae.epochs},
               {"batch_size", cfg.ae.batch_size},
               {"learning_rate", cfg.ae.learning_rate},
               {"ensemble", cfg.ae.ensemble}};
    j["cka_variant"] = enum_name(cfg.cka_variant, kCkaNames);
    j["krum_f"] = cfg.krum_f;
    j["flare"] = {{"probe_size", cfg.flare.probe_size}, {"neighbors", cfg.flare.neighbors}};
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    return j;
}

}  // namespace

SimulationConfig config_from_json_text(const std::string& text) {
    return config_from_json(json::parse(text));
}

SimulationConfig config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

namespace {

struct DefenseOutcome {
    ModelWeights aggregated;
    std::vector<double> scores;
    defense::FilterVerdict verdict;
    int max_index = 0;
};

DefenseOutcome all_benign_outcome(int n) {
    DefenseOutcome out;
    for (int i = 0; i < n; ++i) out.verdict.benign_set.push_back(i);
    return out;
}

}  // namespace

SimulationReport run_simulation(const SimulationConfig& cfg_in) {
    SimulationConfig cfg = cfg_in;
    validate_config(cfg);

    // Build the dataset.
    datahub::Dataset base;
    if (cfg.data.source == "synthetic") {
        base = datahub::synth_generate(cfg.data.n, cfg.data.d, cfg.data.separation,
                                       cfg.data.class_ratio, derive_seed(cfg.seed, kTagData));
    } else {
        base = datahub::load_csv(cfg.data.csv_path, cfg.data.label_column);
    }
    auto [train_set, test_set] =
        datahub::split_train_test(base, cfg.data.test_fraction, derive_seed(cfg.seed, kTagSplit));
    if (cfg.data.standardize) {
        const auto p = datahub::standardize_fit(train_set);
        datahub::standardize_apply(train_set, p);
        datahub::standardize_apply(test_set, p);
    }
    if (cfg.model.sizes.empty()) {
        cfg.model.sizes = {static_cast<int>(train_set.dim()), 32, 16, 1};
    }
    if (cfg.model.sizes.front() != train_set.dim()) {
        throw std::invalid_argument("config: model input width does not match data dimension");
    }

    datahub::PartitionPlan plan = cfg.partition;
    plan.n_clients = cfg.n_clients;
    plan.seed = derive_seed(cfg.seed, kTagPartition);
    std::vector<datahub::Dataset> shards = datahub::partition(train_set, plan);

    const int n = cfg.n_clients;
    const int n_adv = static_cast<int>(std::lround(cfg.adversary_fraction * n));
    std::vector<bool> adversaries(n, false);
    for (int i = n - n_adv; i < n; ++i) adversaries[i] = true;

    // Data-poisoning adversaries corrupt their shard once, before any round.
    for (int i = 0; i < n; ++i) {
        if (!adversaries[i]) continue;
        switch (cfg.attack.kind) {
            case attacks::AttackKind::LabelFlip:
                shards[i] = attacks::label_flip(shards[i]);
                break;
            case attacks::AttackKind::Backdoor: {
                const double thr = std::isnan(cfg.attack.trigger_threshold)
                                       ? attacks::feature_mean_median(shards[i])
                                       : cfg.attack.trigger_threshold;
                shards[i] = attacks::backdoor_poison(shards[i], thr, cfg.attack.target_label);
                break;
            }
            case attacks::AttackKind::GanPoison:
                shards[i] = attacks::gan_poison(shards[i], cfg.attack.gan,
                                                derive_seed(cfg.seed, kTagGan, i));
                break;
            default:
                break;
        }
    }

    ledger::Network net(derive_seed(cfg.seed, kTagNetwork),
                        cfg.ddp.enabled ? cfg.ddp.bound_low : 0.0,
                        cfg.ddp.enabled ? cfg.ddp.bound_high : 0.0);
    std::vector<ledger::Identity> ids;
    std::vector<std::string> id_names;
    for (int i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "client-%03d", i);
        id_names.emplace_back(buf);
        ids.push_back(net.register_identity(id_names.back()));
    }

    ModelWeights global = neuralcore::init_network(cfg.model, derive_seed(cfg.seed, kTagInit));
    std::string global_blob = net.store_blob(neuralcore::serialize(global));

    SimulationReport report;
    report.config = cfg;
    report.adversaries.assign(adversaries.begin(), adversaries.end());
    report.initial_metrics = neuralcore::evaluate(global, test_set);

    const datahub::Dataset probe = [&] {
        datahub::Dataset p;
        const long ps = std::min<long>(cfg.flare.probe_size, test_set.size());
        p.features = test_set.features.topRows(ps);
        p.labels = test_set.labels.head(ps);
        return p;
    }();

    long det_tp = 0, det_fp = 0, det_fn = 0;

    for (int t = 1; t <= cfg.rounds; ++t) {
        net.begin_round(t);
        const ModelWeights fetched = neuralcore::deserialize(net.fetch_blob(global_blob));

        // Client phase: local training (pure per client, parallel-safe).
        std::vector<ModelWeights> trained(n);
        const auto train_client = [&](int i) {
            neuralcore::TrainConfig tc = cfg.train;
            tc.seed = derive_seed(cfg.seed, kTagTrain + static_cast<std::uint64_t>(t), i);
            trained[i] = neuralcore::train_local(fetched, shards[i], tc);
        };
        if (cfg.threads <= 1) {
            for (int i = 0; i < n; ++i) train_client(i);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < cfg.threads; ++w) {
                pool.emplace_back([&, w] {
                    for (int i = w; i < n; i += cfg.threads) train_client(i);
                });
            }
            for (auto& th : pool) th.join();
        }

        // Weight attacks transform the outgoing update after honest training.
        if (n_adv > 0) {
            if (cfg.attack.kind == attacks::AttackKind::WeightScale) {
                for (int i = 0; i < n; ++i) {
                    if (adversaries[i]) trained[i] = attacks::weight_scale(trained[i], cfg.attack.lambda);
                }
            } else if (cfg.attack.kind == attacks::AttackKind::UnKrum ||
                       cfg.attack.kind == attacks::AttackKind::UnMed) {
                // Colluding adversaries pool their honest local models as the
                // benign estimates and submit one shared crafted vector.
                std::vector<ModelWeights> estimates;
                for (int i = 0; i < n; ++i) {
                    if (adversaries[i]) estimates.push_back(trained[i]);
                }
                const ModelWeights crafted =
                    cfg.attack.kind == attacks::AttackKind::UnKrum
                        ? attacks::craft_untargeted_krum(estimates, fetched, n_adv, cfg.attack.margin,
                                                         cfg.attack.eps_floor)
                        : attacks::craft_untargeted_med(estimates, fetched, cfg.attack.margin,
                                                        cfg.attack.eps_floor);
                for (int i = 0; i < n; ++i) {
                    if (adversaries[i]) trained[i] = crafted;
                }
            }
        }

        // DDP: clip, sample the round's noise level, perturb.
        std::vector<privacy::NoisyUpdate> updates;
        updates.reserve(n);
        for (int i = 0; i < n; ++i) {
            if (cfg.ddp.enabled) {
                const ModelWeights clipped = privacy::clip_update(trained[i], cfg.ddp.clip_norm);
                const double sigma = privacy::sample_noise_level(
                    derive_seed(cfg.seed, kTagSigma + static_cast<std::uint64_t>(t), i),
                    cfg.ddp.bound_low, cfg.ddp.bound_high);
                updates.push_back(privacy::perturb(
                    clipped, sigma, derive_seed(cfg.seed, kTagNoise + static_cast<std::uint64_t>(t), i),
                    id_names[i], t));
            } else {
                updates.push_back(privacy::NoisyUpdate{trained[i], 0.0, id_names[i], t});
            }
        }

        // Defense / aggregation.
        DefenseOutcome outcome;
        switch (cfg.defense) {
            case DefenseKind::PenTiDef: {
                const double gap = t <= cfg.warmup_rounds ? defense::kWarmupClusterGap
                                                          : defense::kDefaultClusterGap;
                auto res = defense::run_pentidef(fetched, updates, cfg.ae,
                                                 derive_seed(cfg.seed, kTagAe, t), cfg.cka_variant,
                                                 gap);
                outcome = DefenseOutcome{std::move(res.aggregated), std::move(res.scores.scores),
                                         std::move(res.verdict), res.max_index};
                break;
            }
            case DefenseKind::FedCC: {
                const double gap = t <= cfg.warmup_rounds ? defense::kWarmupClusterGap
                                                          : defense::kDefaultClusterGap;
                auto res = aggregators::fedcc(fetched, updates, cfg.cka_variant, gap);
                outcome = DefenseOutcome{std::move(res.aggregated), std::move(res.scores.scores),
                                         std::move(res.verdict), res.max_index};
                break;
            }
            case DefenseKind::FlareMMD: {
                std::vector<ModelWeights> ws;
                for (const auto& u : updates) ws.push_back(u.weights);
                auto res = aggregators::flare_aggregate(ws, probe, cfg.flare.neighbors);
                outcome = all_benign_outcome(n);
                outcome.aggregated = std::move(res.aggregated);
                outcome.scores = std::move(res.trust);
                outcome.max_index = static_cast<int>(
                    std::max_element(outcome.scores.begin(), outcome.scores.end()) -
                    outcome.scores.begin());
                break;
            }
            case DefenseKind::Krum: {
                std::vector<ModelWeights> ws;
                for (const auto& u : updates) ws.push_back(u.weights);
                const int f = derived_krum_f(cfg);
                outcome = all_benign_outcome(n);
                outcome.max_index = aggregators::krum_index(ws, f);
                outcome.aggregated = ws[outcome.max_index];
                break;
            }
            case DefenseKind::CoordMedian: {
                std::vector<ModelWeights> ws;
                for (const auto& u : updates) ws.push_back(u.weights);
                outcome = all_benign_outcome(n);
                outcome.aggregated = aggregators::coord_median(ws);
                break;
            }
            case DefenseKind::None: {
                std::vector<ModelWeights> ws;
                for (const auto& u : updates) ws.push_back(u.weights);
                outcome = all_benign_outcome(n);
                outcome.aggregated = aggregators::fed_avg(ws);
                break;
            }
        }

        // Ledger phase: every update and the aggregated model become records
        // of this round's block; metadata carries the round's verdicts.
        for (int i = 0; i < n; ++i) {
            ledger::ModelRecord rec;
            rec.blob_hash = net.store_blob(neuralcore::serialize(updates[i].weights));
            rec.meta.round = t;
            rec.meta.client_id = id_names[i];
            rec.meta.sigma = updates[i].sigma;
            rec.meta.epsilon = cfg.ddp.epsilon;
            rec.meta.delta = cfg.ddp.delta;
            rec.meta.trust_score = i < static_cast<int>(outcome.scores.size()) ? outcome.scores[i] : 0.0;
            rec.meta.selected = (i == outcome.max_index);
            rec.meta.adversary_ground_truth = adversaries[i];
            rec.meta.benign_verdict = outcome.verdict.is_benign(i);
            rec.meta.model_index = net.next_model_index();
            rec.signature = net.sign(ids[i], ledger::record_payload(rec));
            const auto res = net.submit_model(rec);
            if (!res.ok) throw std::runtime_error("ledger rejected client update: " + res.reason);
        }
        global = outcome.aggregated;
        global_blob = net.store_blob(neuralcore::serialize(global));
        {
            ledger::ModelRecord rec;
            rec.blob_hash = global_blob;
            rec.meta.round = t;
            rec.meta.client_id = id_names[outcome.max_index];
            rec.meta.sigma = cfg.ddp.enabled ? cfg.ddp.bound_low : 0.0;
            rec.meta.epsilon = cfg.ddp.epsilon;
            rec.meta.delta = cfg.ddp.delta;
            rec.meta.trust_score = 1.0;
            rec.meta.selected = true;
            rec.meta.benign_verdict = true;
            rec.meta.model_index = net.next_model_index();
            rec.signature = net.sign(ids[outcome.max_index], ledger::record_payload(rec));
            const auto res = net.submit_model(rec);
            if (!res.ok) throw std::runtime_error("ledger rejected aggregate record: " + res.reason);
        }
        net.seal_block();

        RoundRecord rr;
        rr.round = t;
        rr.metrics = neuralcore::evaluate(global, test_set);
        rr.cka_scores = outcome.scores;
        rr.sigmas.resize(n);
        for (int i = 0; i < n; ++i) rr.sigmas[i] = updates[i].sigma;
        rr.benign_set = outcome.verdict.benign_set;
        rr.poisoned_set = outcome.verdict.poisoned_set;
        rr.max_index = outcome.max_index;
        rr.global_blob_hash = global_blob;
        report.rounds.push_back(std::move(rr));

        if (cfg.defense == DefenseKind::PenTiDef || cfg.defense == DefenseKind::FedCC) {
            for (int i = 0; i < n; ++i) {
                const bool flagged = !outcome.verdict.is_benign(i);
                if (flagged && adversaries[i]) det_tp++;
                else if (flagged && !adversaries[i]) det_fp++;
                else if (!flagged && adversaries[i]) det_fn++;
            }
        }
    }

    const auto ratio = [](long a, long b) { return b == 0 ? 0.0 : static_cast<double>(a) / b; };
    report.detection_precision = ratio(det_tp, det_tp + det_fp);
    report.detection_recall = ratio(det_tp, det_tp + det_fn);
    report.detection_f1 = (report.detection_precision + report.detection_recall) == 0.0
                              ? 0.0
                              : 2.0 * report.detection_precision * report.detection_recall /
                                    (report.detection_precision + report.detection_recall);
    report.final_model_hash = global_blob;
    report.chain_verified = net.verify_chain();
    report.ledger_records = static_cast<long>(net.query_all().size());
    return report;
}

namespace {

json metrics_to_json(const neuralcore::MetricsReport& m) {
    return json{{"tp", m.tp},         {"tn", m.tn},           {"fp", m.fp},
                {"fn", m.fn},         {"accuracy", m.accuracy}, {"precision", m.precision},
                {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace

std::string render_report(const SimulationReport& report, ReportFormat format) {
    if (format == ReportFormat::JSON) {
        json j;
        j["schema"] = "fedsim-report-v1";
        j["config"] = config_to_json(report.config);
        json adv = json::array();
        for (bool a : report.adversaries) adv.push_back(a ? 1 : 0);
        j["adversaries"] = adv;
        j["initial_metrics"] = metrics_to_json(report.initial_metrics);
        json rounds = json::array();
        for (const auto& r : report.rounds) {
            json rj;
            rj["round"] = r.round;
            rj["metrics"] = metrics_to_json(r.metrics);
            rj["cka_scores"] = r.cka_scores;
            rj["sigmas"] = r.sigmas;
            rj["benign_set"] = r.benign_set;
            rj["poisoned_set"] = r.poisoned_set;
            rj["max_index"] = r.max_index;
            rj["global_blob_hash"] = r.global_blob_hash;
            rounds.push_back(rj);
        }
        j["rounds"] = rounds;
        j["detection"] = {{"precision", report.detection_precision},
                          {"recall", report.detection_recall},
                          {"f1", report.detection_f1}};
        j["final_model_hash"] = report.final_model_hash;
        j["chain_verified"] = report.chain_verified;
        j["ledger_records"] = report.ledger_records;
        return j.dump(2) + "\n";
    }

    // CSV: one row per round, one CKA and one sigma column per client.
    std::ostringstream out;
    const int n = report.config.n_clients;
    out << "round,accuracy,precision,recall,f1,tp,tn,fp,fn,max_index,benign_count,poisoned_count";
    for (int i = 0; i < n; ++i) out << ",cka_" << i;
    for (int i = 0; i < n; ++i) out << ",sigma_" << i;
    out << "\n";
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        out << buf;
    };
    for (const auto& r : report.rounds) {
        out << r.round << ',';
        num(r.metrics.accuracy); out << ',';
        num(r.metrics.precision); out << ',';
        num(r.metrics.recall); out << ',';
        num(r.metrics.f1); out << ',';
        out << r.metrics.tp << ',' << r.metrics.tn << ',' << r.metrics.fp << ',' << r.metrics.fn << ','
            << r.max_index << ',' << r.benign_set.size() << ',' << r.poisoned_set.size();
        for (int i = 0; i < n; ++i) {
            out << ',';
            num(i < static_cast<int>(r.cka_scores.size()) ? r.cka_scores[i] : 0.0);
        }
        for (int i = 0; i < n; ++i) {
            out << ',';
            num(i < static_cast<int>(r.sigmas.size()) ? r.sigmas[i] : 0.0);
        }
        out << "\n";
    }
    return out.str();
}

void emit_report(const SimulationReport& report, const std::string& path, ReportFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report to " + path);
    out << render_report(report, format);
    if (!out) throw std::runtime_error("I/O failure writing " + path);
}

// ---------------------------------------------------------------------------
// Brute-force oracles (test fixtures). Deliberately naive and independent of
// the library implementations above.
namespace oracle {

double gaussian_sigma(double epsilon, double delta, double sensitivity) {
    const long double v =
        sqrtl(2.0L * logl(1.25L / static_cast<long double>(delta))) *
        static_cast<long double>(sensitivity) / static_cast<long double>(epsilon);
    return static_cast<double>(v);
}

int krum(const std::vector<std::vector<double>>& updates, int f) {
    const int n = static_cast<int>(updates.size());
    const int keep = n - f - 2;
    int best = -1;
    double best_score = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> d;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < updates[i].size(); ++c) {
                const double diff = updates[i][c] - updates[j][c];
                s += diff * diff;
            }
            d.push_back(s);
        }
        std::sort(d.begin(), d.end());
        double score = 0.0;
        for (int k = 0; k < keep; ++k) score += d[k];
        if (best < 0 || score < best_score) {
            best = i;
            best_score = score;
        }
    }
    return best;
}

std::vector<double> coord_median(const std::vector<std::vector<double>>& updates) {
    std::vector<double> out;
    for (std::size_t c = 0; c < updates[0].size(); ++c) {
        std::vector<double> col;
        for (const auto& u : updates) col.push_back(u[c]);
        std::sort(col.begin(), col.end());
        const std::size_t n = col.size();
        out.push_back(n % 2 == 1 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]));
    }
    return out;
}

double cka(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
           const std::string& variant) {
    const int n = static_cast<int>(x.size());
    std::vector<std::vector<double>> k(n, std::vector<double>(n, 0.0)), l = k, h = k;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < x[0].size(); ++c) k[i][j] += x[i][c] * x[j][c];
            for (std::size_t c = 0; c < y[0].size(); ++c) l[i][j] += y[i][c] * y[j][c];
            h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / n;
        }
    }
    const auto mul = [n](const auto& a, const auto& b) {
        std::vector<std::vector<double>> r(n, std::vector<double>(n, 0.0));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                for (int c = 0; c < n; ++c) r[i][j] += a[i][c] * b[c][j];
            }
        }
        return r;
    };
    const auto kc = mul(mul(h, k), h);
    const auto lc = mul(mul(h, l), h);
    const auto fro = [n](const auto& a) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) s += a[i][j] * a[i][j];
        }
        return std::sqrt(s);
    };
    const auto trace = [n](const auto& a) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += a[i][i];
        return s;
    };
    if (variant == "StandardTrace") {
        const double den = std::sqrt(trace(mul(kc, kc)) * trace(mul(lc, lc)));
        return den > 0.0 ? trace(mul(kc, lc)) / den : 0.0;
    }
    const double num = fro(mul(kc, lc));
    const double den = fro(mul(kc, kc)) * fro(mul(lc, lc));
    return den > 0.0 ? num * num / den : 0.0;
}

// Exhaustive minimum-SSE 2-partition over contiguous splits of the sorted
// scores, with the production tie-break rules applied afterwards.
std::pair<std::vector<int>, std::vector<int>> kmeans_split(const std::vector<double>& scores) {
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    if (scores[order.back()] - scores[order.front()] < 1e-9) {
        std::vector<int> benign(n);
        for (int i = 0; i < n; ++i) benign[i] = i;
        return {benign, {}};
    }

    double best_sse = 0.0;
    int best_split = 1;
    for (int split = 1; split < n; ++split) {
        double m0 = 0.0, m1 = 0.0;
        for (int i = 0; i < split; ++i) m0 += scores[order[i]];
        for (int i = split; i < n; ++i) m1 += scores[order[i]];
        m0 /= split;
        m1 /= (n - split);
        double sse = 0.0;
        for (int i = 0; i < split; ++i) sse += (scores[order[i]] - m0) * (scores[order[i]] - m0);
        for (int i = split; i < n; ++i) sse += (scores[order[i]] - m1) * (scores[order[i]] - m1);
        if (split == 1 || sse < best_sse) {
            best_sse = sse;
            best_split = split;
        }
    }
    std::vector<int> low, high;
    for (int i = 0; i < best_split; ++i) low.push_back(order[i]);
    for (int i = best_split; i < n; ++i) high.push_back(order[i]);
    std::sort(low.begin(), low.end());
    std::sort(high.begin(), high.end());
    // Majority is benign; the higher-score cluster wins equal-size ties.
    const bool high_benign = high.size() > low.size() || high.size() == low.size();
    return high_benign ? std::make_pair(high, low) : std::make_pair(low, high);
}

double mmd(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
           double bandwidth) {
    const auto kern = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
        return std::exp(-s / (2.0 * bandwidth * bandwidth));
    };
    const int m = static_cast<int>(x.size()), n = static_cast<int>(y.size());
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i != j) xx += kern(x[i], x[j]);
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j) yy += kern(y[i], y[j]);
        }
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) xy += kern(x[i], y[j]);
    }
    double est = 0.0;
    if (m > 1) est += xx / (static_cast<double>(m) * (m - 1));
    if (n > 1) est += yy / (static_cast<double>(n) * (n - 1));
    est -= 2.0 * xy / (static_cast<double>(m) * n);
    return est < 0.0 ? 0.0 : est;
}

}  // namespace oracle

namespace {

int run_oracle(const std::string& name, const std::string& input_path) {
    json in;
    if (input_path.empty() || input_path == "-") {
        std::stringstream ss;
        ss << std::cin.rdbuf();
        in = json::parse(ss.str());
    } else {
        std::ifstream f(input_path);
        if (!f) throw std::runtime_error("cannot open oracle input: " + input_path);
        in = json::parse(f);
    }
    json out;
    if (name == "gaussian-sigma") {
        out["sigma"] = oracle::gaussian_sigma(in.at("epsilon"), in.at("delta"), in.at("sensitivity"));
    } else if (name == "krum") {
        out["index"] = oracle::krum(in.at("updates"), in.at("f"));
    } else if (name == "coord-median") {
        out["median"] = oracle::coord_median(in.at("updates"));
    } else if (name == "cka") {
        out["score"] = oracle::cka(in.at("x"), in.at("y"),
                                   in.value("variant", std::string("SquaredFrobenius")));
    } else if (name == "kmeans-split") {
        const auto [benign, poisoned] = oracle::kmeans_split(in.at("scores"));
        out["benign"] = benign;
        out["poisoned"] = poisoned;
    } else if (name == "mmd") {
        out["mmd"] = oracle::mmd(in.at("x"), in.at("y"), in.at("bandwidth"));
    } else {
        throw std::runtime_error("unknown oracle: " + name);
    }
    std::cout << out.dump() << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Decentralized federated-learning poisoning-defense simulator"};
    app.require_subcommand(1);

    std::string config_path, out_path, format = "json", oracle_name, oracle_input;
    long txs = 5000;
    double rate = 5.0;
    std::uint64_t seed_override = 0;
    bool has_seed = false;
    int threads_override = 0;
    std::string bench_out;
    std::uint64_t bench_seed = 1;

    auto* sim = app.add_subcommand("simulate", "Run a full simulation from a JSON config");
    sim->add_option("--config", config_path, "JSON config file")->required();
    sim->add_option("--seed", seed_override, "Override the master seed")
        ->each([&](const std::string&) { has_seed = true; });
    sim->add_option("--threads", threads_override, "Override the client-phase thread count");
    sim->add_option("--out", out_path, "Report output path (default: report.json)");
    sim->add_option("--format", format, "Report format: json or csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* bench = app.add_subcommand("bench-ledger", "Run the chaincode benchmark workload");
    bench->add_option("--txs", txs, "Transactions per task");
    bench->add_option("--rate", rate, "Send rate in TPS");
    bench->add_option("--out", bench_out, "CSV output path (default: stdout)");
    bench->add_option("--seed", bench_seed, "Network seed");

    auto* val = app.add_subcommand("validate-config", "Check a JSON config against all constraints");
    std::string val_path;
    val->add_option("config", val_path, "JSON config file")->required();

    auto* orc = app.add_subcommand("oracle", "Run a named brute-force oracle (test fixtures)");
    orc->add_option("name", oracle_name, "Oracle name")->required();
    orc->add_option("--in", oracle_input, "JSON input file (default: stdin)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (sim->parsed()) {
            SimulationConfig cfg = config_from_json_file(config_path);
            if (has_seed) cfg.seed = seed_override;
            if (threads_override > 0) cfg.threads = threads_override;
            const auto t0 = std::chrono::steady_clock::now();
            SimulationReport report = run_simulation(cfg);
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const std::string path = out_path.empty() ? "report.json" : out_path;
            emit_report(report, path, format == "csv" ? ReportFormat::CSV : ReportFormat::JSON);
            std::cerr << "simulation finished in " << secs << " s; report written to " << path << "\n";
            if (!report.chain_verified) {
                std::cerr << "error: ledger chain failed verification\n";
                return 1;
            }
            return 0;
        }
        if (bench->parsed()) {
            ledger::Network net(bench_seed);
            ledger::BenchWorkload wl;
            wl.tx_per_task = txs;
            wl.send_rate = rate;
            const auto report = ledger::bench_run(net, wl);
            const std::string csv = ledger::bench_csv(report);
            if (bench_out.empty()) {
                std::cout << csv;
            } else {
                std::ofstream f(bench_out, std::ios::binary);
                if (!f) throw std::runtime_error("cannot write " + bench_out);
                f << csv;
            }
            if (!net.verify_chain()) {
                std::cerr << "error: ledger chain failed verification after bench\n";
                return 1;
            }
            return 0;
        }
        if (val->parsed()) {
            validate_config(config_from_json_file(val_path));
            std::cout << "config ok\n";
            return 0;
        }
        if (orc->parsed()) {
            return run_oracle(oracle_name, oracle_input);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace fedsim::simctl
