#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedsim::ledger {

using Bytes = std::vector<std::uint8_t>;

std::string sha256_hex(const Bytes& data);

struct Identity {
    std::string client_id;
    Bytes verify_key;
    Bytes signing_key;  // held by the client only
};

struct ModelMeta {
    int round = 0;
    std::string client_id;
    double sigma = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
    double trust_score = 0.0;
    bool selected = false;
    bool adversary_ground_truth = false;
    bool benign_verdict = true;
    long model_index = 0;
};

struct ModelRecord {
    std::string blob_hash;
    ModelMeta meta;
    Bytes signature;  // over (blob_hash, meta)
};

struct LedgerBlock {
    long index = 0;
    std::string prev_hash;
    std::vector<ModelRecord> records;
    std::string block_hash;
};

enum class SubmitError { None, UnknownClient, BadSignature, StaleRound, SigmaOutOfBounds, MissingBlob, IndexGap };

struct SubmitResult {
    bool ok = false;
    SubmitError error = SubmitError::None;
    std::string reason;
};

const char* submit_error_name(SubmitError e);

// Canonical byte serialization of (blob_hash, meta); this is what gets signed
// and what block hashes commit to.
Bytes record_payload(const ModelRecord& r);

// Single-process permissioned ledger: identity registry, content-addressed
// blob store, pending-transaction pool, and an append-only hash-linked chain.
// Endorsement is the VerifySig && ValidateMeta predicate in submit_model.
class Network {
public:
    explicit Network(std::uint64_t seed, double sigma_low = 0.0, double sigma_high = 0.2);

    // Keypair derived deterministically from (network seed, id).
    Identity register_identity(const std::string& client_id);
    // Registers on first use, re-derives the same identity afterwards.
    Identity identity_for(const std::string& client_id);
    bool is_registered(const std::string& client_id) const;

    Bytes sign(const Identity& identity, const Bytes& payload) const;
    bool verify(const std::string& client_id, const Bytes& payload, const Bytes& signature) const;

    std::string store_blob(const Bytes& data);
    const Bytes& fetch_blob(const std::string& hash) const;
    bool has_blob(const std::string& hash) const;

    void begin_round(int round);
    int current_round() const { return round_; }
    long next_model_index() const { return next_index_; }

    SubmitResult submit_model(const ModelRecord& record);

    // Query set mirroring the chaincode tasks; sealed blocks first, then the
    // pending pool, in append order.
    std::vector<ModelRecord> query_all() const;
    std::optional<ModelRecord> query_last() const;
    std::vector<ModelRecord> query_by_selected_client(const std::string& client_id) const;
    std::vector<ModelRecord> query_by_model_index(long index) const;
    std::vector<ModelRecord> query_by_adversary() const;
    std::vector<ModelRecord> query_by_benign() const;

    LedgerBlock seal_block();
    bool verify_chain() const;
    bool has_pending() const { return !pending_.empty(); }

    // Direct chain access for inspection and tamper tests.
    std::vector<LedgerBlock>& blocks() { return chain_; }
    const std::vector<LedgerBlock>& blocks() const { return chain_; }

private:
    std::uint64_t seed_;
    double sigma_low_, sigma_high_;
    int round_ = 0;
    long next_index_ = 0;
    std::map<std::string, Bytes> registry_;  // client_id -> verify key
    std::map<std::string, Bytes> blobs_;
    std::vector<ModelRecord> pending_;
    std::vector<LedgerBlock> chain_;  // chain_[0] is the genesis block
};

struct BenchTaskRow {
    std::string name;
    long succ = 0, fail = 0;
    double send_rate = 0.0;      // TPS
    double max_latency = 0.0;    // seconds
    double min_latency = 0.0;
    double avg_latency = 0.0;
    double throughput = 0.0;     // TPS
};

struct BenchReport {
    std::vector<BenchTaskRow> rows;
};

struct BenchWorkload {
    long tx_per_task = 5000;
    double send_rate = 5.0;
    std::vector<std::string> tasks;  // empty selects the full chaincode task set
};

extern const std::vector<std::string> kBenchTasks;

// Issues each task at the configured rate on a virtual timeline; per-tx
// processing cost is measured wall-clock, latency is completion minus issue
// time under a single serialized commit point.
BenchReport bench_run(Network& net, const BenchWorkload& workload);

// Exact Table-style column set:
// Name,Succ,Fail,Send Rate (TPS),Max Latency (s),Min Latency (s),Avg Latency (s),Throughput (TPS)
std::string bench_csv(const BenchReport& report);

}  // namespace fedsim::ledger
