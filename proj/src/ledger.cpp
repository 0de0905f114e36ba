#include "fedsim/ledger.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "fedsim/rng.hpp"

namespace fedsim::ledger {

namespace {

constexpr int kDigestLen = 32;

std::string to_hex(const unsigned char* data, std::size_t len) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(hex[data[i] >> 4]);
        out.push_back(hex[data[i] & 0x0f]);
    }
    return out;
}

Bytes sha256(const Bytes& data) {
    unsigned char digest[kDigestLen];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    return Bytes(digest, digest + len);
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(Bytes& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

void put_str(Bytes& out, const std::string& s) {
    put_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

std::string sha256_hex(const Bytes& data) {
    const Bytes d = sha256(data);
    return to_hex(d.data(), d.size());
}

Bytes record_payload(const ModelRecord& r) {
    Bytes out;
    put_str(out, r.blob_hash);
    put_u64(out, static_cast<std::uint64_t>(r.meta.round));
    put_str(out, r.meta.client_id);
    put_f64(out, r.meta.sigma);
    put_f64(out, r.meta.epsilon);
    put_f64(out, r.meta.delta);
    put_f64(out, r.meta.trust_score);
    out.push_back(r.meta.selected ? 1 : 0);
    out.push_back(r.meta.adversary_ground_truth ? 1 : 0);
    out.push_back(r.meta.benign_verdict ? 1 : 0);
    put_u64(out, static_cast<std::uint64_t>(r.meta.model_index));
    return out;
}

const char* submit_error_name(SubmitError e) {
    switch (e) {
        case SubmitError::None: return "None";
        case SubmitError::UnknownClient: return "UnknownClient";
        case SubmitError::BadSignature: return "BadSignature";
        case SubmitError::StaleRound: return "StaleRound";
        case SubmitError::SigmaOutOfBounds: return "SigmaOutOfBounds";
        case SubmitError::MissingBlob: return "MissingBlob";
        case SubmitError::IndexGap: return "IndexGap";
    }
    return "?";
}

Network::Network(std::uint64_t seed, double sigma_low, double sigma_high)
    : seed_(seed), sigma_low_(sigma_low), sigma_high_(sigma_high) {
    LedgerBlock genesis;
    genesis.index = 0;
    genesis.prev_hash.assign(64, '0');
    Bytes h;
    put_u64(h, 0);
    h.insert(h.end(), genesis.prev_hash.begin(), genesis.prev_hash.end());
    genesis.block_hash = sha256_hex(h);
    chain_.push_back(std::move(genesis));
}

Identity Network::register_identity(const std::string& client_id) {
    if (registry_.count(client_id)) {
        throw std::invalid_argument("register_identity: duplicate id " + client_id);
    }
    // Keyed-digest scheme: signing and verification share one derived key.
    Bytes material;
    put_u64(material, seed_);
    put_str(material, client_id);
    Bytes key = sha256(material);
    registry_[client_id] = key;
    return Identity{client_id, key, key};
}

Identity Network::identity_for(const std::string& client_id) {
    auto it = registry_.find(client_id);
    if (it != registry_.end()) return Identity{client_id, it->second, it->second};
    return register_identity(client_id);
}

bool Network::is_registered(const std::string& client_id) const {
    return registry_.count(client_id) > 0;
}

Bytes Network::sign(const Identity& identity, const Bytes& payload) const {
    unsigned char mac[kDigestLen];
    unsigned int len = 0;
    HMAC(EVP_sha256(), identity.signing_key.data(), static_cast<int>(identity.signing_key.size()),
         payload.data(), payload.size(), mac, &len);
    return Bytes(mac, mac + len);
}

bool Network::verify(const std::string& client_id, const Bytes& payload, const Bytes& signature) const {
    auto it = registry_.find(client_id);
    if (it == registry_.end()) throw std::invalid_argument("verify: unknown client " + client_id);
    unsigned char mac[kDigestLen];
    unsigned int len = 0;
    HMAC(EVP_sha256(), it->second.data(), static_cast<int>(it->second.size()), payload.data(),
         payload.size(), mac, &len);
    return signature.size() == len && std::memcmp(mac, signature.data(), len) == 0;
}

std::string Network::store_blob(const Bytes& data) {
    std::string hash = sha256_hex(data);
    blobs_.emplace(hash, data);  // content-addressed: duplicates collapse
    return hash;
}

const Bytes& Network::fetch_blob(const std::string& hash) const {
    auto it = blobs_.find(hash);
    if (it == blobs_.end()) throw std::out_of_range("fetch_blob: unknown hash " + hash);
    return it->second;
}

bool Network::has_blob(const std::string& hash) const { return blobs_.count(hash) > 0; }

void Network::begin_round(int round) { round_ = round; }

SubmitResult Network::submit_model(const ModelRecord& record) {
    const auto reject = [](SubmitError e, const std::string& why) {
        return SubmitResult{false, e, std::string(submit_error_name(e)) + ": " + why};
    };
    if (!is_registered(record.meta.client_id)) {
        return reject(SubmitError::UnknownClient, record.meta.client_id);
    }
    if (!verify(record.meta.client_id, record_payload(record), record.signature)) {
        return reject(SubmitError::BadSignature, "signature does not verify");
    }
    if (record.meta.round != round_) {
        return reject(SubmitError::StaleRound, "record round " + std::to_string(record.meta.round) +
                                                   " != current round " + std::to_string(round_));
    }
    if (record.meta.sigma < sigma_low_ || record.meta.sigma > sigma_high_) {
        return reject(SubmitError::SigmaOutOfBounds, "sigma outside configured bounds");
    }
    if (!has_blob(record.blob_hash)) {
        return reject(SubmitError::MissingBlob, record.blob_hash);
    }
    if (record.meta.model_index != next_index_) {
        return reject(SubmitError::IndexGap, "expected index " + std::to_string(next_index_));
    }
    pending_.push_back(record);
    next_index_++;
    return SubmitResult{true, SubmitError::None, ""};
}

std::vector<ModelRecord> Network::query_all() const {
    std::vector<ModelRecord> out;
    for (const auto& b : chain_) out.insert(out.end(), b.records.begin(), b.records.end());
    out.insert(out.end(), pending_.begin(), pending_.end());
    return out;
}

std::optional<ModelRecord> Network::query_last() const {
    const auto all = query_all();
    if (all.empty()) return std::nullopt;
    return *std::max_element(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return a.meta.model_index < b.meta.model_index;
    });
}

std::vector<ModelRecord> Network::query_by_selected_client(const std::string& client_id) const {
    std::vector<ModelRecord> out;
    for (const auto& r : query_all()) {
        if (r.meta.selected && r.meta.client_id == client_id) out.push_back(r);
    }
    return out;
}

std::vector<ModelRecord> Network::query_by_model_index(long index) const {
    std::vector<ModelRecord> out;
    for (const auto& r : query_all()) {
        if (r.meta.model_index == index) out.push_back(r);
    }
    return out;
}

std::vector<ModelRecord> Network::query_by_adversary() const {
    std::vector<ModelRecord> out;
    for (const auto& r : query_all()) {
        if (r.meta.adversary_ground_truth) out.push_back(r);
    }
    return out;
}

std::vector<ModelRecord> Network::query_by_benign() const {
    std::vector<ModelRecord> out;
    for (const auto& r : query_all()) {
        if (r.meta.benign_verdict) out.push_back(r);
    }
    return out;
}

namespace {

std::string block_digest(long index, const std::string& prev_hash,
                         const std::vector<ModelRecord>& records) {
    Bytes h;
    put_u64(h, static_cast<std::uint64_t>(index));
    h.insert(h.end(), prev_hash.begin(), prev_hash.end());
    for (const auto& r : records) {
        const Bytes payload = record_payload(r);
        put_u64(h, payload.size());
        h.insert(h.end(), payload.begin(), payload.end());
        put_u64(h, r.signature.size());
        h.insert(h.end(), r.signature.begin(), r.signature.end());
    }
    return sha256_hex(h);
}

}  // namespace

LedgerBlock Network::seal_block() {
    LedgerBlock block;
    block.index = static_cast<long>(chain_.size());
    block.prev_hash = chain_.back().block_hash;
    block.records = std::move(pending_);
    pending_.clear();
    block.block_hash = block_digest(block.index, block.prev_hash, block.records);
    chain_.push_back(block);
    return block;
}

bool Network::verify_chain() const {
    const std::string zero(64, '0');
    for (std::size_t i = 0; i < chain_.size(); ++i) {
        const auto& b = chain_[i];
        if (b.index != static_cast<long>(i)) return false;
        if (i == 0) {
            if (b.prev_hash != zero) return false;
        } else if (b.prev_hash != chain_[i - 1].block_hash) {
            return false;
        }
        if (b.block_hash != block_digest(b.index, b.prev_hash, b.records)) return false;
        for (const auto& r : b.records) {
            if (!is_registered(r.meta.client_id)) return false;
            if (!verify(r.meta.client_id, record_payload(r), r.signature)) return false;
        }
    }
    return true;
}

const std::vector<std::string> kBenchTasks = {
    "CreateModel",
    "QueryAllModels",
    "QueryLastModel",
    "QueryModelsBySelectedClientID",
    "QueryModelsByModelIndex",
    "QueryModelsByAdversaryClientID",
    "QueryModelsByBenignClientID",
};

BenchReport bench_run(Network& net, const BenchWorkload& workload) {
    const auto tasks = workload.tasks.empty() ? kBenchTasks : workload.tasks;
    if (workload.send_rate <= 0.0) throw std::invalid_argument("bench_run: send_rate must be > 0");

    const std::string bench_id = "bench-client";
    Identity identity = net.identity_for(bench_id);
    const std::string blob = net.store_blob(Bytes{0x42, 0x4c, 0x4f, 0x42});
    const double interval = 1.0 / workload.send_rate;
    using clock = std::chrono::steady_clock;

    BenchReport report;
    for (const auto& task : tasks) {
        BenchTaskRow row;
        row.name = task;
        row.send_rate = workload.send_rate;
        double vtime_done = 0.0;  // virtual completion of the previous tx
        double lat_min = 1e300, lat_max = 0.0, lat_sum = 0.0;
        for (long i = 0; i < workload.tx_per_task; ++i) {
            const double issue = static_cast<double>(i) * interval;
            bool ok = true;
            const auto t0 = clock::now();
            if (task == "CreateModel") {
                ModelRecord r;
                r.blob_hash = blob;
                r.meta.round = net.current_round();
                r.meta.client_id = bench_id;
                r.meta.sigma = 0.0;
                r.meta.model_index = net.next_model_index();
                r.meta.benign_verdict = (i % 2 == 0);
                r.meta.adversary_ground_truth = (i % 5 == 0);
                r.meta.selected = (i % 7 == 0);
                r.signature = net.sign(identity, record_payload(r));
                ok = net.submit_model(r).ok;
                if (net.has_pending() && (i + 1) % 500 == 0) net.seal_block();
            } else if (task == "QueryAllModels") {
                (void)net.query_all();
            } else if (task == "QueryLastModel") {
                ok = net.query_last().has_value();
            } else if (task == "QueryModelsBySelectedClientID") {
                (void)net.query_by_selected_client(bench_id);
            } else if (task == "QueryModelsByModelIndex") {
                (void)net.query_by_model_index(i % std::max<long>(1, net.next_model_index()));
            } else if (task == "QueryModelsByAdversaryClientID") {
                (void)net.query_by_adversary();
            } else if (task == "QueryModelsByBenignClientID") {
                (void)net.query_by_benign();
            } else {
                throw std::invalid_argument("bench_run: unknown task " + task);
            }
            const double cost =
                std::chrono::duration<double>(clock::now() - t0).count();
            // Single serialized commit point on the virtual timeline.
            const double done = std::max(issue, vtime_done) + cost;
            vtime_done = done;
            const double latency = done - issue;
            lat_min = std::min(lat_min, latency);
            lat_max = std::max(lat_max, latency);
            lat_sum += latency;
            if (ok) row.succ++; else row.fail++;
        }
        if (net.has_pending()) net.seal_block();
        row.min_latency = lat_min;
        row.max_latency = lat_max;
        row.avg_latency = lat_sum / static_cast<double>(workload.tx_per_task);
        const double span = vtime_done;
        row.throughput = span > 0.0 ? static_cast<double>(row.succ) / span : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

std::string bench_csv(const BenchReport& report) {
    std::ostringstream out;
    out << "Name,Succ,Fail,Send Rate (TPS),Max Latency (s),Min Latency (s),Avg Latency (s),"
           "Throughput (TPS)\n";
    out.setf(std::ios::fixed);
    for (const auto& r : report.rows) {
        out.precision(2);
        out << r.name << ',' << r.succ << ',' << r.fail << ',' << r.send_rate << ',';
        out.precision(6);
        out << r.max_latency << ',' << r.min_latency << ',' << r.avg_latency << ',';
        out.precision(2);
        out << r.throughput << '\n';
    }
    return out.str();
}

}  // namespace fedsim::ledger
