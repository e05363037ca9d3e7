#include "esnet/kg_embed.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "esnet/errors.hpp"
#include "esnet/rng.hpp"
#include "esnet/text.hpp"

namespace esnet::embed {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -log sigmoid(x), stable for large |x|.
double neg_log_sigmoid(double x) {
  if (x >= 0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

// Loss of one (center, context, negatives) group and the scalar
// coefficients of its gradient: d/dv = c_ctx u_ctx + sum c_k u_k,
// d/du_ctx = c_ctx v, d/du_k = c_k v.
struct PairTerms {
  double loss = 0.0;
  double context_coef = 0.0;
  std::vector<double> negative_coefs;
};

template <class Row>
PairTerms pair_terms(const Row& center, const RowMatrix& output, std::uint32_t context,
                     std::span<const std::uint32_t> negatives) {
  PairTerms t;
  const double pos = output.row(context).dot(center);
  t.loss = neg_log_sigmoid(pos);
  t.context_coef = sigmoid(pos) - 1.0;
  t.negative_coefs.reserve(negatives.size());
  for (const auto n : negatives) {
    const double s = output.row(n).dot(center);
    t.loss += neg_log_sigmoid(-s);
    t.negative_coefs.push_back(sigmoid(s));
  }
  return t;
}

void add_to(std::map<std::uint32_t, Eigen::VectorXd>& grads, std::uint32_t row,
            const Eigen::VectorXd& g) {
  auto [it, inserted] = grads.try_emplace(row, g);
  if (!inserted) it->second += g;
}

}  // namespace

void WalkConfig::validate() const {
  if (walks_per_entity < 1 || depth < 1) {
    throw UsageError("walk config needs walks_per_entity >= 1 and depth >= 1");
  }
}

void Corpus::add(std::vector<std::string> document) {
  if (document.empty()) return;
  for (const auto& tok : document) ++counts[tok];
  documents.push_back(std::move(document));
}

Corpus structural_document(const kg::ElementKG& kg, const WalkConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  const auto& entities = kg.entities();
  for (std::uint32_t start = 0; start < entities.size(); ++start) {
    for (int w = 0; w < cfg.walks_per_entity; ++w) {
      Rng rng(stream_seed(cfg.seed, start, static_cast<std::uint64_t>(w)));
      std::vector<std::string> walk{entities[start]};
      std::uint32_t at = start;
      for (int hop = 0; hop < cfg.depth; ++hop) {
        const auto& adj = kg.adjacency(at);
        if (adj.empty()) break;
        const auto& edge = adj[rng.below(adj.size())];
        walk.push_back(kg.relations()[edge.relation]);
        walk.push_back(entities[edge.neighbor]);
        at = edge.neighbor;
      }
      corpus.add(std::move(walk));
    }
  }
  return corpus;
}

Corpus lexical_document(const kg::ElementKG& kg) {
  Corpus corpus;
  for (const auto& t : kg.triples()) corpus.add({t.subject, t.predicate, t.object});
  return corpus;
}

Corpus merge_corpora(const Corpus& first, const Corpus& second) {
  Corpus merged = first;
  for (const auto& doc : second.documents) merged.documents.push_back(doc);
  for (const auto& [tok, n] : second.counts) merged.counts[tok] += n;
  return merged;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& doc : corpus.documents) {
    for (std::size_t i = 0; i < doc.size(); ++i) out << (i ? " " : "") << doc[i];
    out << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) corpus.add(text::split_whitespace(line));
  return corpus;
}

void SkipGramConfig::validate() const {
  if (dim < 1 || window < 1 || negatives < 1 || epochs < 1 || !(learning_rate > 0.0)) {
    throw UsageError("skip-gram config needs dim, window, negatives, epochs >= 1 and lr > 0");
  }
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& token) const {
  const auto it = index.find(token);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(const Corpus& corpus, std::uint64_t min_count) {
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (const auto& [tok, n] : corpus.counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : kept) {
    v.index.emplace(tok, static_cast<std::uint32_t>(v.tokens.size()));
    v.tokens.push_back(tok);
    v.counts.push_back(n);
  }
  return v;
}

SkipGramModel init_skipgram(const Corpus& corpus, const SkipGramConfig& cfg) {
  cfg.validate();
  SkipGramModel m;
  m.vocab = build_vocabulary(corpus, cfg.min_count);
  if (m.vocab.size() == 0) throw DataError("EmptyVocabulary", "no token survives min_count");
  const auto v = static_cast<Eigen::Index>(m.vocab.size());
  m.input.resize(v, cfg.dim);
  m.output = RowMatrix::Zero(v, cfg.dim);
  Rng rng(stream_seed(cfg.seed, 0x5eed));
  const double half = 0.5 / cfg.dim;
  for (Eigen::Index r = 0; r < v; ++r) {
    for (Eigen::Index c = 0; c < cfg.dim; ++c) m.input(r, c) = rng.uniform(-half, half);
  }
  return m;
}

SkipGramGradient skipgram_loss_grad(const SkipGramModel& model, std::uint32_t center,
                                    std::uint32_t context,
                                    std::span<const std::uint32_t> negatives) {
  const Eigen::VectorXd v = model.input.row(center).transpose();
  const auto t = pair_terms(model.input.row(center), model.output, context, negatives);
  SkipGramGradient g;
  g.loss = t.loss;
  Eigen::VectorXd dv = t.context_coef * model.output.row(context).transpose();
  add_to(g.output, context, t.context_coef * v);
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    dv += t.negative_coefs[k] * model.output.row(negatives[k]).transpose();
    add_to(g.output, negatives[k], t.negative_coefs[k] * v);
  }
  add_to(g.input, center, dv);
  return g;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, RowMatrix vectors)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)) {
  if (static_cast<Eigen::Index>(tokens_.size()) != vectors_.rows()) {
    throw DataError("ShapeMismatch", "embedding table rows do not match token count");
  }
  if (!vectors_.allFinite()) throw NumericError("embedding table has non-finite entries");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw DataError("DuplicateToken", "token " + tokens_[i] + " appears twice");
    }
  }
}

Eigen::VectorXd EmbeddingTable::vector(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) {
    throw DataError("UnknownElement", "no embedding for " + token);
  }
  return vectors_.row(static_cast<Eigen::Index>(it->second)).transpose();
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.tokens()[i];
    for (Eigen::Index c = 0; c < table.dim(); ++c) {
      out << ' ' << text::format_double(table.vectors()(static_cast<Eigen::Index>(i), c));
    }
    out << '\n';
  }
}

EmbeddingTable read_embeddings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("ParseError", "embedding table is empty");
  const auto header = text::split_whitespace(line);
  const auto n = header.size() == 2 ? text::parse_int(header[0]) : std::nullopt;
  const auto d = header.size() == 2 ? text::parse_int(header[1]) : std::nullopt;
  if (!n || !d || *n < 0 || *d < 1) {
    throw DataError("ParseError", "embedding header must be '<vocab_size> <dim>'");
  }
  std::vector<std::string> tokens;
  RowMatrix vectors(*n, *d);
  for (long long r = 0; r < *n; ++r) {
    if (!std::getline(in, line)) throw DataError("ParseError", "embedding table is truncated");
    const auto cells = text::split_whitespace(line);
    if (static_cast<long long>(cells.size()) != *d + 1) {
      throw DataError("ParseError", "embedding row " + std::to_string(r + 2) + " has wrong width");
    }
    tokens.push_back(cells[0]);
    for (long long c = 0; c < *d; ++c) {
      const auto v = text::parse_double(cells[c + 1]);
      if (!v) throw DataError("ParseError", "bad number in embedding row " + std::to_string(r + 2));
      vectors(r, c) = *v;
    }
  }
  return EmbeddingTable(std::move(tokens), std::move(vectors));
}

SkipGramResult train_skipgram(const Corpus& corpus, const SkipGramConfig& cfg,
                              const EpochCallback& on_epoch) {
  auto model = init_skipgram(corpus, cfg);
  const auto& vocab = model.vocab;

  std::vector<std::vector<std::uint32_t>> docs;
  std::size_t total_pairs = 0;
  for (const auto& doc : corpus.documents) {
    std::vector<std::uint32_t> ids;
    for (const auto& tok : doc) {
      if (const auto id = vocab.find(tok)) ids.push_back(*id);
    }
    const auto len = static_cast<long>(ids.size());
    for (long i = 0; i < len; ++i) {
      total_pairs += static_cast<std::size_t>(std::min<long>(i + cfg.window, len - 1) -
                                              std::max<long>(i - cfg.window, 0));
    }
    if (!ids.empty()) docs.push_back(std::move(ids));
  }

  // Unigram^(3/4) noise distribution.
  std::vector<double> cumulative(vocab.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    acc += std::pow(static_cast<double>(vocab.counts[i]), 0.75);
    cumulative[i] = acc;
  }
  for (auto& c : cumulative) c /= acc;

  Rng rng(stream_seed(cfg.seed, 0x9a11));
  auto sample_noise = [&]() {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return static_cast<std::uint32_t>(std::min<std::size_t>(it - cumulative.begin(),
                                                            cumulative.size() - 1));
  };

  SkipGramResult result;
  const double schedule_len = static_cast<double>(std::max<std::size_t>(total_pairs, 1)) * cfg.epochs;
  std::size_t step = 0;
  std::vector<std::uint32_t> negatives;
  Eigen::VectorXd dv(cfg.dim);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (const auto& ids : docs) {
      const auto len = static_cast<long>(ids.size());
      for (long i = 0; i < len; ++i) {
        const auto center = ids[i];
        const long lo = std::max<long>(i - cfg.window, 0);
        const long hi = std::min<long>(i + cfg.window, len - 1);
        for (long j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const auto context = ids[j];
          negatives.clear();
          for (int k = 0; k < cfg.negatives; ++k) {
            const auto n = sample_noise();
            if (n != context) negatives.push_back(n);
          }
          const double lr =
              cfg.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(step) / schedule_len);
          ++step;

          auto v = model.input.row(center);
          const auto t = pair_terms(v, model.output, context, negatives);
          loss_sum += t.loss;
          ++pairs;

          dv = t.context_coef * model.output.row(context).transpose();
          for (std::size_t k = 0; k < negatives.size(); ++k) {
            dv += t.negative_coefs[k] * model.output.row(negatives[k]).transpose();
          }
          model.output.row(context) -= lr * t.context_coef * v;
          for (std::size_t k = 0; k < negatives.size(); ++k) {
            model.output.row(negatives[k]) -= lr * t.negative_coefs[k] * v;
          }
          v -= lr * dv.transpose();
        }
      }
    }
    const double mean = pairs ? loss_sum / static_cast<double>(pairs) : 0.0;
    if (!std::isfinite(mean)) throw NumericError("skip-gram loss became non-finite");
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }

  result.table = EmbeddingTable(vocab.tokens, std::move(model.input));
  return result;
}

CompositionEmbedding composition_embedding(
    const std::vector<std::pair<std::string, double>>& composition, const EmbeddingTable& table) {
  if (composition.empty()) throw DataError("InvalidComposition", "composition is empty");
  std::map<std::string, double> counts;
  for (const auto& [symbol, count] : composition) {
    if (!(count > 0.0) || !std::isfinite(count)) {
      throw DataError("InvalidComposition", "count for " + symbol + " must be positive");
    }
    if (!table.contains(symbol)) {
      throw DataError("UnknownElement", "no embedding for element " + symbol);
    }
    counts[symbol] += count;
  }
  double total = 0.0;
  for (const auto& [symbol, count] : counts) total += count;

  CompositionEmbedding out;
  out.vector = Eigen::VectorXd::Zero(table.dim());
  for (const auto& [symbol, count] : counts) {
    const double lambda = count / total;
    out.fractions.emplace_back(symbol, lambda);
    out.vector += lambda * table.vector(symbol);
  }
  return out;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0 ? a.dot(b) / denom : 0.0;
}

}  // namespace esnet::embed
