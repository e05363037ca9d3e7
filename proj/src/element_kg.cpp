#include "esnet/element_kg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "esnet/errors.hpp"
#include "esnet/text.hpp"

namespace esnet::kg {

namespace {

struct Column {
  std::string name;
  bool continuous = false;
  std::string unit;
};

Column parse_header_cell(const std::string& cell) {
  Column col;
  const auto open = cell.find('(');
  if (open == std::string::npos) {
    col.name = cell;
    return col;
  }
  if (cell.back() != ')' || open == 0) {
    throw DataError("ParseError", "malformed column header '" + cell + "'");
  }
  col.name = cell.substr(0, open);
  col.unit = cell.substr(open + 1, cell.size() - open - 2);
  col.continuous = true;
  if (col.unit.empty()) {
    throw DataError("ParseError", "continuous column '" + col.name + "' has an empty unit");
  }
  return col;
}

bool is_missing(std::string_view cell) { return cell.empty() || cell == "NA" || cell == "-"; }

}  // namespace

double ElementRecord::number(const std::string& name) const {
  const auto it = attributes.find(name);
  if (it == attributes.end()) {
    throw DataError("MissingAttribute", symbol + " has no attribute " + name);
  }
  if (const auto* v = std::get_if<double>(&it->second)) return *v;
  // Categorical columns such as Group hold integers as labels.
  const auto& s = std::get<std::string>(it->second);
  const auto parsed = text::parse_double(s);
  if (!parsed) {
    throw DataError("ParseError", symbol + "." + name + " is not numeric: '" + s + "'");
  }
  return *parsed;
}

const std::string& ElementRecord::label(const std::string& name) const {
  const auto it = attributes.find(name);
  if (it == attributes.end()) {
    throw DataError("MissingAttribute", symbol + " has no attribute " + name);
  }
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw DataError("ParseError", symbol + "." + name + " is numeric, expected a label");
}

ElementTable::ElementTable(std::vector<AttributeSchema> schema, std::vector<ElementRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(),
            [](const auto& a, const auto& b) { return a.atomic_number < b.atomic_number; });
  std::set<int> seen_z;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!by_symbol_.emplace(r.symbol, i).second) {
      throw DataError("DuplicateSymbol", "symbol " + r.symbol + " appears more than once");
    }
    if (!seen_z.insert(r.atomic_number).second) {
      throw DataError("DuplicateAtomicNumber",
                      "atomic number " + std::to_string(r.atomic_number) + " appears more than once");
    }
  }
}

const ElementRecord* ElementTable::find(std::string_view symbol) const {
  const auto it = by_symbol_.find(std::string(symbol));
  return it == by_symbol_.end() ? nullptr : &records_[it->second];
}

const ElementRecord& ElementTable::at(std::string_view symbol) const {
  if (const auto* r = find(symbol)) return *r;
  throw DataError("UnknownElement", "element " + std::string(symbol) + " is not in the table");
}

const AttributeSchema* ElementTable::attribute(std::string_view name) const {
  for (const auto& s : schema_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<int> ElementTable::missing_atomic_numbers() const {
  std::vector<bool> present(kMaxAtomicNumber + 1, false);
  for (const auto& r : records_) present[r.atomic_number] = true;
  std::vector<int> missing;
  for (int z = 1; z <= kMaxAtomicNumber; ++z) {
    if (!present[z]) missing.push_back(z);
  }
  return missing;
}

ElementTable parse_element_table(std::istream& in) {
  std::vector<Column> columns;
  std::vector<ElementRecord> records;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto cells = text::split(line, '\t');

    if (!have_header) {
      if (cells.size() < 2 || cells[0] != "Symbol" || cells[1] != "AtomicNumber") {
        throw DataError("ParseError", "header must start with Symbol<TAB>AtomicNumber");
      }
      std::set<std::string> names;
      for (std::size_t c = 2; c < cells.size(); ++c) {
        columns.push_back(parse_header_cell(cells[c]));
        if (!names.insert(columns.back().name).second) {
          throw DataError("ParseError", "duplicate column " + columns.back().name);
        }
      }
      if (static_cast<int>(columns.size()) < kMinAttributesPerElement) {
        throw DataError("TooFewAttributes", "table declares " + std::to_string(columns.size()) +
                                                " attributes, need at least " +
                                                std::to_string(kMinAttributesPerElement));
      }
      have_header = true;
      continue;
    }

    ElementRecord rec;
    rec.symbol = cells.empty() ? std::string() : cells[0];
    if (rec.symbol.empty()) {
      throw DataError("ParseError", "line " + std::to_string(line_no) + ": empty symbol");
    }
    const auto z = cells.size() > 1 ? text::parse_int(cells[1]) : std::nullopt;
    if (!z) {
      throw DataError("ParseError", "line " + std::to_string(line_no) + ": bad atomic number");
    }
    if (*z < 1 || *z > kMaxAtomicNumber) {
      throw DataError("OutOfSupportedRange",
                      rec.symbol + " has atomic number " + std::to_string(*z) + " outside 1.." +
                          std::to_string(kMaxAtomicNumber));
    }
    rec.atomic_number = *z;
    if (cells.size() > columns.size() + 2) {
      throw DataError("ParseError", "line " + std::to_string(line_no) + ": too many cells");
    }

    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& col = columns[c];
      const std::string cell = c + 2 < cells.size() ? text::trim(cells[c + 2]) : std::string();
      if (is_missing(cell)) {
        throw DataError("MissingAttribute", rec.symbol + " has no value for " + col.name);
      }
      if (!col.continuous) {
        rec.attributes.emplace(col.name, cell);
        continue;
      }
      std::string number = cell;
      if (const auto sp = cell.find(' '); sp != std::string::npos) {
        number = cell.substr(0, sp);
        const auto unit = text::trim(cell.substr(sp + 1));
        if (unit != col.unit) {
          throw DataError("UnitMismatch", rec.symbol + "." + col.name + " given in '" + unit +
                                              "', schema unit is '" + col.unit + "'");
        }
      }
      const auto v = text::parse_double(number);
      if (!v || !std::isfinite(*v)) {
        throw DataError("ParseError", "line " + std::to_string(line_no) + ": " + col.name +
                                          " value '" + cell + "' is not a finite number");
      }
      rec.attributes.emplace(col.name, *v);
    }
    records.push_back(std::move(rec));
  }

  std::vector<AttributeSchema> schema;
  if (records.empty()) return ElementTable(std::move(schema), std::move(records));

  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.atomic_number < b.atomic_number; });
  for (const auto& col : columns) {
    AttributeSchema s;
    s.name = col.name;
    if (col.continuous) {
      s.kind = AttributeKind::Continuous;
      s.unit = col.unit;
      s.min = std::numeric_limits<double>::infinity();
      s.max = -s.min;
      for (const auto& r : records) {
        const double v = std::get<double>(r.attributes.at(col.name));
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
      }
    } else {
      s.kind = AttributeKind::Categorical;
      for (const auto& r : records) {
        const auto& v = std::get<std::string>(r.attributes.at(col.name));
        if (std::find(s.categories.begin(), s.categories.end(), v) == s.categories.end()) {
          s.categories.push_back(v);
        }
      }
    }
    schema.push_back(std::move(s));
  }
  return ElementTable(std::move(schema), std::move(records));
}

ElementTable load_element_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("MissingInput", "cannot open element table " + path);
  return parse_element_table(in);
}

void DiscretizationRule::validate() const {
  if (bins < 1) throw DataError("InvalidRule", attribute + ": bins must be positive");
  if (edges.size() != static_cast<std::size_t>(bins) + 1) {
    throw DataError("InvalidRule", attribute + ": expected bins+1 edges");
  }
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (!(edges[i] < edges[i + 1])) {
      throw DataError("InvalidRule", attribute + ": edges must be strictly increasing");
    }
  }
}

DiscretizationRule uniform_rule(std::string attribute, double min, double max, int bins) {
  if (!(min < max) || bins < 1) {
    throw DataError("InvalidRule", attribute + ": need min < max and bins >= 1");
  }
  DiscretizationRule rule{std::move(attribute), bins, {}};
  rule.edges.resize(bins + 1);
  const double width = (max - min) / bins;
  for (int i = 0; i < bins; ++i) rule.edges[i] = min + width * i;
  rule.edges[bins] = max;
  rule.validate();
  return rule;
}

DiscretizationRule uniform_rule(const AttributeSchema& schema, int bins) {
  if (schema.kind != AttributeKind::Continuous) {
    throw DataError("InvalidRule", schema.name + " is categorical");
  }
  return uniform_rule(schema.name, schema.min, schema.max, bins);
}

std::vector<DiscretizationRule> default_rules(const ElementTable& table, int bins) {
  std::vector<DiscretizationRule> rules;
  for (const auto& s : table.schema()) {
    if (s.kind == AttributeKind::Continuous) rules.push_back(uniform_rule(s, bins));
  }
  return rules;
}

BinIndex discretize(double value, const DiscretizationRule& rule) {
  if (!std::isfinite(value)) {
    throw DataError("NonFiniteValue", rule.attribute + ": cannot discretize a non-finite value");
  }
  const auto& e = rule.edges;
  if (value < e.front()) return {0, true};
  if (value > e.back()) return {rule.bins - 1, true};
  const auto it = std::upper_bound(e.begin(), e.end(), value);
  const int bin = static_cast<int>(it - e.begin()) - 1;
  return {std::min(bin, rule.bins - 1), false};
}

std::string relation_name(std::string_view attribute) {
  return "is" + std::string(attribute) + "Of";
}

std::string attribute_label(const AttributeSchema& schema, const AttributeValue& value,
                            const DiscretizationRule* rule) {
  if (schema.kind == AttributeKind::Continuous) {
    if (rule == nullptr) throw DataError("InvalidRule", "no rule for " + schema.name);
    return schema.name + std::to_string(discretize(std::get<double>(value), *rule).bin);
  }
  // Prefixing the attribute keeps Group1 and Period1 distinct entities.
  return schema.name + std::get<std::string>(value);
}

std::vector<Triple> build_triples(const ElementTable& table,
                                  const std::vector<DiscretizationRule>& rules) {
  std::vector<const DiscretizationRule*> rule_for;
  for (const auto& s : table.schema()) {
    const DiscretizationRule* found = nullptr;
    for (const auto& r : rules) {
      if (r.attribute == s.name) found = &r;
    }
    if (s.kind == AttributeKind::Continuous && found == nullptr) {
      throw DataError("InvalidRule", "continuous attribute " + s.name + " has no rule");
    }
    if (found != nullptr) found->validate();
    rule_for.push_back(found);
  }

  std::vector<Triple> triples;
  for (const auto& rec : table.records()) {
    for (std::size_t a = 0; a < table.schema().size(); ++a) {
      const auto& s = table.schema()[a];
      const auto it = rec.attributes.find(s.name);
      if (it == rec.attributes.end()) {
        throw DataError("MissingAttribute", rec.symbol + " has no value for " + s.name);
      }
      try {
        triples.push_back({attribute_label(s, it->second, rule_for[a]), relation_name(s.name),
                           rec.symbol});
      } catch (const DataError& e) {
        throw DataError(e.code(), rec.symbol + ": " + e.detail());
      }
    }
  }
  return triples;
}

void write_triples(std::ostream& out, const std::vector<Triple>& triples) {
  for (const auto& t : triples) out << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
}

std::vector<Triple> read_triples(std::istream& in) {
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = text::split(line, '\t');
    if (cells.size() != 3 || cells[0].empty() || cells[1].empty() || cells[2].empty()) {
      throw DataError("ParseError", "triple line " + std::to_string(line_no) + " is malformed");
    }
    triples.push_back({cells[0], cells[1], cells[2]});
  }
  return triples;
}

std::optional<std::uint32_t> ElementKG::entity_id(std::string_view name) const {
  const auto it = entity_index_.find(std::string(name));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t ElementKG::intern(std::vector<std::string>& names,
                                std::unordered_map<std::string, std::uint32_t>& index,
                                const std::string& name) {
  const auto [it, inserted] = index.emplace(name, static_cast<std::uint32_t>(names.size()));
  if (inserted) names.push_back(name);
  return it->second;
}

ElementKG build_kg(const std::vector<Triple>& triples) {
  ElementKG kg;
  std::set<Triple> seen;
  for (const auto& t : triples) {
    if (!seen.insert(t).second) continue;
    kg.triples_.push_back(t);
    const auto s = kg.intern(kg.entities_, kg.entity_index_, t.subject);
    const auto o = kg.intern(kg.entities_, kg.entity_index_, t.object);
    const auto r = kg.intern(kg.relations_, kg.relation_index_, t.predicate);
    kg.adjacency_.resize(kg.entities_.size());
    kg.adjacency_[s].push_back({r, o, false});
    kg.adjacency_[o].push_back({r, s, true});
  }
  return kg;
}

}  // namespace esnet::kg
