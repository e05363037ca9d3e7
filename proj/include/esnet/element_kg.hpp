#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace esnet::kg {

inline constexpr int kMaxAtomicNumber = 103;
inline constexpr int kMinAttributesPerElement = 15;
inline constexpr int kDefaultBins = 10;

enum class AttributeKind { Continuous, Categorical };

struct AttributeSchema {
  std::string name;
  AttributeKind kind = AttributeKind::Categorical;
  std::string unit;  // empty for categorical attributes, "-" for dimensionless numbers
  double min = 0.0;  // observed range, continuous only
  double max = 0.0;
  std::vector<std::string> categories;  // first-seen order, categorical only
};

using AttributeValue = std::variant<double, std::string>;

struct ElementRecord {
  std::string symbol;
  int atomic_number = 0;
  std::map<std::string, AttributeValue> attributes;

  double number(const std::string& name) const;
  const std::string& label(const std::string& name) const;
};

class ElementTable {
 public:
  ElementTable() = default;
  ElementTable(std::vector<AttributeSchema> schema, std::vector<ElementRecord> records);

  const std::vector<AttributeSchema>& schema() const noexcept { return schema_; }
  const std::vector<ElementRecord>& records() const noexcept { return records_; }
  bool empty() const noexcept { return records_.empty(); }

  const ElementRecord* find(std::string_view symbol) const;
  const ElementRecord& at(std::string_view symbol) const;  // throws UnknownElement
  const AttributeSchema* attribute(std::string_view name) const;

  // Atomic numbers in 1..kMaxAtomicNumber with no record.
  std::vector<int> missing_atomic_numbers() const;

 private:
  std::vector<AttributeSchema> schema_;
  std::vector<ElementRecord> records_;
  std::unordered_map<std::string, std::size_t> by_symbol_;
};

// Tab-separated table. '#' lines are comments. The header starts with
// "Symbol<TAB>AtomicNumber"; a column named "Name(unit)" is continuous and
// a bare "Name" is categorical. A numeric cell may repeat its unit after a
// space ("0.97 g/cm3"), which must then match the header.
ElementTable parse_element_table(std::istream& in);
ElementTable load_element_table(const std::string& path);

struct DiscretizationRule {
  std::string attribute;
  int bins = 0;
  std::vector<double> edges;  // bins + 1, strictly increasing

  void validate() const;
};

DiscretizationRule uniform_rule(std::string attribute, double min, double max, int bins);
DiscretizationRule uniform_rule(const AttributeSchema& schema, int bins = kDefaultBins);
std::vector<DiscretizationRule> default_rules(const ElementTable& table, int bins = kDefaultBins);

struct BinIndex {
  int bin = 0;
  bool clamped = false;  // value fell outside [edges.front(), edges.back()]
};

// edges[i] <= value < edges[i+1]; the top edge belongs to the last bin.
BinIndex discretize(double value, const DiscretizationRule& rule);

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  auto operator<=>(const Triple&) const = default;
};

std::string relation_name(std::string_view attribute);  // "Density" -> "isDensityOf"
std::string attribute_label(const AttributeSchema& schema, const AttributeValue& value,
                            const DiscretizationRule* rule);

std::vector<Triple> build_triples(const ElementTable& table,
                                  const std::vector<DiscretizationRule>& rules);

void write_triples(std::ostream& out, const std::vector<Triple>& triples);
std::vector<Triple> read_triples(std::istream& in);

struct KgEdge {
  std::uint32_t relation = 0;
  std::uint32_t neighbor = 0;
  bool inverse = false;

  auto operator<=>(const KgEdge&) const = default;
};

class ElementKG {
 public:
  const std::vector<std::string>& entities() const noexcept { return entities_; }
  const std::vector<std::string>& relations() const noexcept { return relations_; }
  const std::vector<KgEdge>& adjacency(std::uint32_t entity) const { return adjacency_.at(entity); }
  // Deduplicated facts in first-seen order.
  const std::vector<Triple>& triples() const noexcept { return triples_; }
  std::optional<std::uint32_t> entity_id(std::string_view name) const;

  friend ElementKG build_kg(const std::vector<Triple>& triples);

 private:
  std::uint32_t intern(std::vector<std::string>& names,
                       std::unordered_map<std::string, std::uint32_t>& index,
                       const std::string& name);

  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, std::uint32_t> entity_index_;
  std::unordered_map<std::string, std::uint32_t> relation_index_;
  std::vector<std::vector<KgEdge>> adjacency_;
  std::vector<Triple> triples_;
};

ElementKG build_kg(const std::vector<Triple>& triples);

}  // namespace esnet::kg
