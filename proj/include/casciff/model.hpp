#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "casciff/cascade.hpp"
#include "casciff/influence.hpp"
#include "casciff/tape.hpp"
#include "casciff/tensor.hpp"

namespace casciff {

// Every hyperparameter and ablation flag; fully determines the architecture.
struct ModelConfig {
  std::uint32_t max_hop = 2;       // n: hop count of the influence input
  std::uint32_t per_hop_len = 50;  // s: scores per hop
  std::uint32_t max_nodes = 100;   // snapshot width (GCN input dim)
  std::uint32_t embed_dim = 64;    // width of g_u, g_c, fused vector, GRU state
  std::uint32_t ae1_h1 = 128;      // influence autoencoder hidden widths
  std::uint32_t ae1_h2 = 96;
  std::uint32_t fusion_h = 96;     // fusion autoencoder hidden width
  std::uint32_t reg_hidden = 64;   // regression head hidden width
  std::uint32_t cls_hidden = 32;   // classifier head hidden width

  double window_w = 3600.0;        // observation window (bounds decay input)
  double decay_interval = 600.0;   // decay bucket length, seconds
  std::uint32_t decay_intervals = 6;  // L

  double lambda_init = 1.0;        // hop weights and decay weights start here
  bool lambda_per_dim = false;     // hop weight per coordinate instead of scalar
  double l2 = 1e-6;                // coefficient on Σ‖W‖² (weight matrices only)
  double w_reg = 1.0, w_cl = 1.0, w_ae1 = 1.0, w_ae2 = 1.0;  // loss term weights

  // Ablations. time_off also removes the decay weights and binarizes the
  // snapshot adjacency; global_off removes the classifier with its input.
  bool local_off = false;
  bool global_off = false;
  bool time_off = false;
  bool decay_off = false;
  bool class_off = false;

  std::uint32_t influence_dim() const { return max_hop * per_hop_len; }
  std::uint32_t gru_input_dim() const { return embed_dim + (time_off ? 0u : 1u); }
  bool has_influence() const { return !global_off; }
  bool has_gcn() const { return !local_off; }
  bool has_decay_params() const { return !decay_off && !time_off; }
  bool has_classifier() const { return !class_off && !global_off; }
  void validate() const;  // throws ConfigError
};

// One observed cascade in model-ready form.
struct CascadeExample {
  std::string cascade_id;
  std::vector<UserId> users;             // activation order
  std::vector<std::int32_t> parent_row;  // index into users; -1 for the root
  std::vector<double> times;             // seconds, ≤ window
  std::vector<double> t_prime;           // normalized times
  std::uint64_t target = 0;              // ΔR
  double target_log = 0.0;               // log2(ΔR + 1)
  std::uint64_t horizon_size = 0;        // cascade size at the horizon
};

CascadeExample make_example(const LabeledCascade& lc);

// Weighted adjacency over the first `upto` activations: α[p][c] = t'_c,
// α[v][v] = t'_v. The binary variant keeps the structure with unit weights.
Tensor example_alpha_block(const CascadeExample& ex, std::size_t upto);
Tensor example_binary_block(const CascadeExample& ex, std::size_t upto);

struct LossBreakdown {
  double total = 0.0;
  double reg = 0.0, cl = 0.0, ae1 = 0.0, ae2 = 0.0, rgl = 0.0;
  std::size_t batch_users = 0;   // distinct users encoded
  std::size_t fusion_steps = 0;  // reconstruction terms in ae2
};

// ΔR̂ from a log2-space prediction: max(0, 2^p − 1).
double increment_from_log(double pred_log);

class CasciffModel {
 public:
  CasciffModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  // Creation order is stable: it defines checkpoint and optimizer layouts.
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;  // total scalar count
  Parameter* find(const std::string& name);

  // --- forward pieces (single-input forms used by tests and tools) ---------

  // hop_matrix is the user's unweighted (max_hop × s) score matrix; applies
  // the learnable hop weights, encodes, and returns (g_u, reconstruction mse).
  std::pair<Value, Value> encode_influence(Tape& t, const Tensor& hop_matrix);
  // alpha_block is a live ℓ×ℓ weighted adjacency (any ℓ ≤ max_nodes).
  Value encode_snapshot(Tape& t, const Tensor& alpha_block);
  // (fused step vector Stru_ti, reconstruction mse)
  std::pair<Value, Value> fuse(Tape& t, Value g_u, Value g_c, double t_prime);
  // BiGRU: h_i = concat(forward_i, backward_i), each 2·embed_dim wide.
  std::vector<Value> encode_sequence(Tape& t, const std::vector<Value>& steps);
  Value apply_decay(Tape& t, const std::vector<Value>& hs, const std::vector<double>& times);
  Value predict_increment(Tape& t, Value c);       // scalar, log2 space
  Value classify_users(Tape& t, Value g_u_rows);   // (U, E) → (U, 2) probabilities

  // --- full pipeline --------------------------------------------------------

  // The decayed cascade vector c (for export and inspection).
  Value cascade_embedding(Tape& t, const CascadeExample& ex, const InfluenceStore& store);
  double predict_log(const CascadeExample& ex, const InfluenceStore& store);

  // Combined multi-task loss over a batch; leader_by_user is indexed by
  // UserId. Component values are reported through `breakdown`.
  Value batch_loss(Tape& t, const std::vector<const CascadeExample*>& batch,
                   const InfluenceStore& store, const std::vector<char>& leader_by_user,
                   LossBreakdown* breakdown);

 private:
  struct Ctx {
    Tape* t;
    std::unordered_map<const Parameter*, Value> leaves;
  };
  Value lv(Ctx& c, Parameter& p);
  Value zeros(Ctx& c, std::size_t n);

  Parameter& add_param(const std::string& name, Tensor init, bool regularized);
  Parameter& p(const std::string& name);

  // batched user encoding: hop blocks are (U × s) per hop
  std::pair<Value, Value> encode_influence_rows(Ctx& c, const std::vector<Value>& hop_blocks);
  Value encode_snapshot_impl(Ctx& c, const Tensor& alpha_block);
  std::pair<Value, Value> fuse_impl(Ctx& c, Value g_u, Value g_c, double t_prime);
  std::vector<Value> gru_direction(Ctx& c, const std::vector<Value>& steps, bool forward);
  std::vector<Value> encode_sequence_impl(Ctx& c, const std::vector<Value>& steps);
  Value apply_decay_impl(Ctx& c, const std::vector<Value>& hs, const std::vector<double>& times);
  Value predict_increment_impl(Ctx& c, Value v);
  Value classify_impl(Ctx& c, Value rows);
  Value mlp_head(Ctx& c, Value x, const std::string& prefix);

  struct CascadeTrace {
    Value embedding;
    Value pred_log;
    std::vector<Value> ae2_terms;
  };
  CascadeTrace run_cascade(Ctx& c, const CascadeExample& ex, Value gu_rows,
                           const std::unordered_map<UserId, std::size_t>& row_of);

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace casciff
