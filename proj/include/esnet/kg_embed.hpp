#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "esnet/element_kg.hpp"

namespace esnet::embed {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WalkConfig {
  int walks_per_entity = 20;
  int depth = 4;  // relation-entity hops per walk
  std::uint64_t seed = 42;

  void validate() const;
};

struct Corpus {
  std::vector<std::vector<std::string>> documents;
  std::map<std::string, std::uint64_t> counts;

  void add(std::vector<std::string> document);
  std::size_t size() const noexcept { return documents.size(); }
};

// Random walks over the KG. Each walk alternates entity and relation tokens
// and draws from its own stream seeded by (seed, entity, walk index).
Corpus structural_document(const kg::ElementKG& kg, const WalkConfig& cfg);
// One [subject, predicate, object] sentence per fact.
Corpus lexical_document(const kg::ElementKG& kg);
Corpus merge_corpora(const Corpus& first, const Corpus& second);

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);

struct SkipGramConfig {
  int dim = 64;
  int window = 5;
  int negatives = 5;
  double learning_rate = 0.025;
  int epochs = 10;
  std::uint64_t min_count = 1;
  std::uint64_t seed = 42;

  void validate() const;
};

// Tokens ordered by descending frequency, ties broken lexicographically.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  std::unordered_map<std::string, std::uint32_t> index;

  std::optional<std::uint32_t> find(const std::string& token) const;
  std::size_t size() const noexcept { return tokens.size(); }
};

Vocabulary build_vocabulary(const Corpus& corpus, std::uint64_t min_count);

// Center ("input") and context ("output") vectors, one row per token.
struct SkipGramModel {
  Vocabulary vocab;
  RowMatrix input;
  RowMatrix output;
};

SkipGramModel init_skipgram(const Corpus& corpus, const SkipGramConfig& cfg);

struct SkipGramGradient {
  double loss = 0.0;
  // Gradients accumulated per touched row; repeated tokens sum.
  std::map<std::uint32_t, Eigen::VectorXd> input;
  std::map<std::uint32_t, Eigen::VectorXd> output;
};

// loss = -log s(u_ctx . v) - sum_k log s(-u_k . v), v the center input row.
SkipGramGradient skipgram_loss_grad(const SkipGramModel& model, std::uint32_t center,
                                    std::uint32_t context,
                                    std::span<const std::uint32_t> negatives);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> tokens, RowMatrix vectors);

  int dim() const noexcept { return static_cast<int>(vectors_.cols()); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const RowMatrix& vectors() const noexcept { return vectors_; }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  Eigen::VectorXd vector(const std::string& token) const;  // throws UnknownElement

 private:
  std::vector<std::string> tokens_;
  RowMatrix vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

void write_embeddings(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable read_embeddings(std::istream& in);

struct SkipGramResult {
  EmbeddingTable table;
  std::vector<double> epoch_loss;  // mean negative-sampling loss per pair
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

SkipGramResult train_skipgram(const Corpus& corpus, const SkipGramConfig& cfg,
                              const EpochCallback& on_epoch = {});

struct CompositionEmbedding {
  Eigen::VectorXd vector;
  std::vector<std::pair<std::string, double>> fractions;  // sorted by symbol
};

// H_e = sum_i lambda_i e_i with lambda_i = count_i / sum(count).
CompositionEmbedding composition_embedding(
    const std::vector<std::pair<std::string, double>>& composition, const EmbeddingTable& table);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace esnet::embed
