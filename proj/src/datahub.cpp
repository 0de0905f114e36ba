#include "fedsim/datahub.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::datahub {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& s, long line_no, const std::string& column) {
    char* end = nullptr;
    const std::string t = trim(s);
    if (t.empty()) {
        throw std::runtime_error("malformed row at line " + std::to_string(line_no) +
                                 ": empty value in column '" + column + "'");
    }
    double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) {
        throw std::runtime_error("malformed row at line " + std::to_string(line_no) +
                                 ": cannot parse '" + t + "' in column '" + column + "'");
    }
    return v;
}

Dataset take_rows(const Dataset& d, const std::vector<long>& idx) {
    Dataset out;
    out.features.resize(static_cast<long>(idx.size()), d.dim());
    out.labels.resize(static_cast<long>(idx.size()));
    for (long i = 0; i < static_cast<long>(idx.size()); ++i) {
        out.features.row(i) = d.features.row(idx[i]);
        out.labels(i) = d.labels(idx[i]);
    }
    out.feature_names = d.feature_names;
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty file: " + path);
    const auto header = split_csv_line(line);
    long label_idx = -1;
    for (long i = 0; i < static_cast<long>(header.size()); ++i) {
        if (header[i] == label_column) label_idx = i;
    }
    if (label_idx < 0) {
        throw std::runtime_error("label column '" + label_column + "' not found in " + path);
    }

    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw std::runtime_error("malformed row at line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(header.size()) + " columns, got " +
                                     std::to_string(cells.size()));
        }
        std::vector<double> row;
        row.reserve(header.size() - 1);
        for (long i = 0; i < static_cast<long>(cells.size()); ++i) {
            double v = parse_number(cells[i], line_no, header[i]);
            if (i == label_idx) {
                if (v != 0.0 && v != 1.0) {
                    throw std::runtime_error("non-binary label at line " + std::to_string(line_no) +
                                             ": " + cells[i]);
                }
                labels.push_back(static_cast<int>(v));
            } else {
                row.push_back(v);
            }
        }
        feats.push_back(std::move(row));
    }
    if (feats.empty()) throw std::runtime_error("no data rows in " + path);

    Dataset out;
    out.features.resize(static_cast<long>(feats.size()), static_cast<long>(feats[0].size()));
    out.labels.resize(static_cast<long>(labels.size()));
    for (long i = 0; i < out.size(); ++i) {
        for (long j = 0; j < out.dim(); ++j) out.features(i, j) = feats[i][j];
        out.labels(i) = labels[i];
    }
    for (long i = 0; i < static_cast<long>(header.size()); ++i) {
        if (i != label_idx) out.feature_names.push_back(header[i]);
    }
    return out;
}

Dataset synth_generate(long n, long d, double separation, double class_ratio, std::uint64_t seed) {
    if (n < 2 || d < 1) throw std::invalid_argument("synth_generate: need n >= 2 and d >= 1");
    if (separation < 0) throw std::invalid_argument("synth_generate: separation must be >= 0");
    if (class_ratio < 0.0 || class_ratio > 1.0) {
        throw std::invalid_argument("synth_generate: class_ratio must be in [0, 1]");
    }
    Rng rng(derive_seed(seed, 0x5359'4e54ULL));
    const long n_pos = std::lround(class_ratio * static_cast<double>(n));
    const double dir = 1.0 / std::sqrt(static_cast<double>(d));  // unit all-ones direction

    Dataset out;
    out.features.resize(n, d);
    out.labels.resize(n);
    // The attack class is tighter than the benign class; unequal spreads keep
    // the two distributions from being mirror images of each other.
    for (long i = 0; i < n; ++i) {
        const int y = i < n_pos ? 1 : 0;
        const double offset = (y == 1 ? 0.5 : -0.5) * separation * dir;
        const double scale = y == 1 ? 0.5 : 1.0;
        for (long j = 0; j < d; ++j) out.features(i, j) = offset + scale * rng.normal();
        out.labels(i) = y;
    }
    return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0) {
        throw std::invalid_argument("split_train_test: fraction must be in (0, 1)");
    }
    std::vector<long> pos, neg;
    for (long i = 0; i < data.size(); ++i) (data.labels(i) == 1 ? pos : neg).push_back(i);
    Rng rng(derive_seed(seed, 0x53'504cULL));
    rng.shuffle(pos);
    rng.shuffle(neg);

    const long test_total = std::lround(test_fraction * static_cast<double>(data.size()));
    long test_pos = std::lround(test_fraction * static_cast<double>(pos.size()));
    test_pos = std::clamp(test_pos, std::max(0L, test_total - static_cast<long>(neg.size())),
                          std::min(test_total, static_cast<long>(pos.size())));
    const long test_neg = test_total - test_pos;

    std::vector<long> test_idx, train_idx;
    test_idx.insert(test_idx.end(), pos.begin(), pos.begin() + test_pos);
    test_idx.insert(test_idx.end(), neg.begin(), neg.begin() + test_neg);
    train_idx.insert(train_idx.end(), pos.begin() + test_pos, pos.end());
    train_idx.insert(train_idx.end(), neg.begin() + test_neg, neg.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    return {take_rows(data, train_idx), take_rows(data, test_idx)};
}

namespace {

// Largest-remainder allocation of `total` items to weights.
std::vector<long> apportion(const std::vector<double>& weights, long total) {
    const long k = static_cast<long>(weights.size());
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (wsum <= 0.0) wsum = 1.0;
    std::vector<long> counts(k, 0);
    std::vector<std::pair<double, long>> rem;
    long assigned = 0;
    for (long i = 0; i < k; ++i) {
        double exact = weights[i] / wsum * static_cast<double>(total);
        counts[i] = static_cast<long>(std::floor(exact));
        assigned += counts[i];
        rem.push_back({exact - std::floor(exact), i});
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (long r = 0; assigned < total; ++r, ++assigned) counts[rem[r % k].second]++;
    return counts;
}

}  // namespace

std::vector<Dataset> partition(const Dataset& train, const PartitionPlan& plan) {
    const long k = plan.n_clients;
    if (k < 2) throw std::invalid_argument("partition: n_clients must be >= 2");
    if (k > train.size()) throw std::invalid_argument("partition: too few samples for n_clients");
    if (plan.alpha <= 0.0) throw std::invalid_argument("partition: alpha must be > 0");

    Rng rng(derive_seed(plan.seed, 0x5041'5254ULL));
    std::vector<long> all(train.size());
    std::iota(all.begin(), all.end(), 0);

    std::vector<std::vector<long>> shards(k);
    if (plan.scheme == PartitionScheme::IID) {
        rng.shuffle(all);
        for (long i = 0; i < train.size(); ++i) shards[i % k].push_back(all[i]);
    } else {
        std::vector<long> pos, neg;
        for (long i : all) (train.labels(i) == 1 ? pos : neg).push_back(i);
        rng.shuffle(pos);
        rng.shuffle(neg);
        // Per-client Dirichlet label proportions; resample the whole draw
        // until every shard receives at least one sample of each class.
        std::vector<long> cpos, cneg;
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            std::vector<double> wpos(k), wneg(k);
            for (long i = 0; i < k; ++i) {
                double a = rng.gamma(plan.alpha);
                double b = rng.gamma(plan.alpha);
                double s = a + b;
                if (s <= 0.0) { a = b = 0.5; s = 1.0; }
                wpos[i] = a / s;
                wneg[i] = b / s;
            }
            cpos = apportion(wpos, static_cast<long>(pos.size()));
            cneg = apportion(wneg, static_cast<long>(neg.size()));
            ok = true;
            for (long i = 0; i < k; ++i) {
                if (cpos[i] < 1 || cneg[i] < 1) ok = false;
            }
        }
        if (!ok) {
            // Degenerate regime (tiny shards or extreme alpha): seed one sample
            // of each class per shard, then deal the remainder round-robin.
            cpos.assign(k, 1);
            cneg.assign(k, 1);
            long extra_pos = static_cast<long>(pos.size()) - k;
            long extra_neg = static_cast<long>(neg.size()) - k;
            if (extra_pos < 0 || extra_neg < 0) {
                throw std::invalid_argument("partition: a class has fewer samples than clients");
            }
            for (long r = 0; r < extra_pos; ++r) cpos[r % k]++;
            for (long r = 0; r < extra_neg; ++r) cneg[r % k]++;
        }
        long p = 0, q = 0;
        for (long i = 0; i < k; ++i) {
            for (long c = 0; c < cpos[i]; ++c) shards[i].push_back(pos[p++]);
            for (long c = 0; c < cneg[i]; ++c) shards[i].push_back(neg[q++]);
        }
    }

    std::vector<Dataset> out;
    out.reserve(k);
    for (auto& s : shards) {
        std::sort(s.begin(), s.end());
        out.push_back(take_rows(train, s));
    }
    return out;
}

StandardizeParams standardize_fit(const Dataset& train) {
    StandardizeParams p;
    p.mean = train.features.colwise().mean();
    Eigen::VectorXd var = (train.features.rowwise() - p.mean.transpose()).array().square().colwise().mean();
    p.std = var.array().sqrt();
    for (long j = 0; j < p.std.size(); ++j) {
        if (p.std(j) < 1e-12) p.std(j) = 1.0;
    }
    return p;
}

void standardize_apply(Dataset& data, const StandardizeParams& p) {
    data.features = (data.features.rowwise() - p.mean.transpose()).array().rowwise() /
                    p.std.transpose().array();
}

}  // namespace fedsim::datahub
