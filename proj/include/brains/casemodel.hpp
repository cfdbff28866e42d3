#pragma once

// Clinical case schema: validation, preprocessing, canonical narrative
// rendering, corpus text sanitization, the synthetic cohort generator and
// corpus splitting / import / export.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "brains/core/error.hpp"
#include "brains/core/rng.hpp"

namespace brains {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Labels

enum class Subtype : std::uint8_t { EarlyOnset = 0, LateOnset = 1, Familial = 2, Sporadic = 3, Atypical = 4 };

inline constexpr std::size_t kNumSubtypes = 5;

inline constexpr std::array<std::string_view, kNumSubtypes> kSubtypeNames = {
    "EarlyOnset", "LateOnset", "Familial", "Sporadic", "Atypical"};

inline constexpr std::array<std::string_view, kNumSubtypes> kSubtypeDisplayNames = {
    "Early-Onset Alzheimer's Disease", "Late-Onset Alzheimer's Disease",
    "Familial Alzheimer's Disease", "Sporadic Alzheimer's Disease",
    "Atypical Alzheimer's Disease"};

inline std::optional<Subtype> subtype_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumSubtypes; ++i)
    if (kSubtypeNames[i] == name) return static_cast<Subtype>(i);
  return std::nullopt;
}

enum class CardinalityClass { Single, Double, Triple, Other };

constexpr std::string_view to_string(CardinalityClass c) {
  switch (c) {
    case CardinalityClass::Single: return "single";
    case CardinalityClass::Double: return "double";
    case CardinalityClass::Triple: return "triple";
    case CardinalityClass::Other: return "other";
  }
  return "other";
}

/// Set of subtype labels stored as a 5-bit mask (bit i = subtype code i).
class LabelSet {
 public:
  constexpr LabelSet() = default;
  constexpr LabelSet(std::initializer_list<Subtype> labels) {
    for (auto l : labels) insert(l);
  }

  static constexpr LabelSet from_bits(std::uint8_t bits) {
    LabelSet s;
    s.bits_ = bits & 0x1F;
    return s;
  }

  constexpr void insert(Subtype s) { bits_ |= std::uint8_t(1u << static_cast<unsigned>(s)); }
  constexpr void erase(Subtype s) { bits_ &= std::uint8_t(~(1u << static_cast<unsigned>(s))); }
  constexpr bool contains(Subtype s) const { return (bits_ >> static_cast<unsigned>(s)) & 1u; }
  constexpr bool contains(std::size_t code) const { return (bits_ >> code) & 1u; }
  constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  constexpr LabelSet intersect(LabelSet o) const { return from_bits(bits_ & o.bits_); }
  constexpr LabelSet unite(LabelSet o) const { return from_bits(bits_ | o.bits_); }
  constexpr LabelSet minus(LabelSet o) const { return from_bits(bits_ & ~o.bits_); }

  constexpr CardinalityClass cardinality_class() const {
    switch (size()) {
      case 1: return CardinalityClass::Single;
      case 2: return CardinalityClass::Double;
      case 3: return CardinalityClass::Triple;
      default: return CardinalityClass::Other;
    }
  }

  std::vector<Subtype> labels() const {
    std::vector<Subtype> out;
    for (std::size_t i = 0; i < kNumSubtypes; ++i)
      if (contains(i)) out.push_back(static_cast<Subtype>(i));
    return out;
  }

  friend constexpr bool operator==(LabelSet, LabelSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

inline json labels_to_json(LabelSet s) {
  json arr = json::array();
  for (auto l : s.labels()) arr.push_back(kSubtypeNames[static_cast<std::size_t>(l)]);
  return arr;
}

inline LabelSet labels_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::UnknownCategory, "labels must be an array", {{"field", "labels"}});
  LabelSet s;
  for (const auto& item : j) {
    if (item.is_number_integer()) {
      const auto code = item.get<long long>();
      if (code < 0 || code >= static_cast<long long>(kNumSubtypes))
        throw Error(ErrorCode::UnknownCategory, "label code out of range",
                    {{"field", "labels"}, {"token", item.dump()}});
      s.insert(static_cast<Subtype>(code));
    } else if (item.is_string()) {
      auto l = subtype_from_name(item.get<std::string>());
      if (!l) throw Error(ErrorCode::UnknownCategory, "unknown label", {{"field", "labels"}, {"token", item}});
      s.insert(*l);
    } else {
      throw Error(ErrorCode::UnknownCategory, "bad label entry", {{"field", "labels"}, {"token", item.dump()}});
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Patient case

enum class Gender : std::uint8_t { Female = 0, Male = 1, Unknown = 2 };
enum class Handedness : std::uint8_t { Left = 0, Right = 1, Unknown = 2 };

inline constexpr std::array<double, 5> kCdrLevels = {0.0, 0.5, 1.0, 2.0, 3.0};

/// Numeric (interval-scaled) fields, in alphabetical order of field name.
enum class NumericField : std::uint8_t {
  Age, AmygdalaVolume, ApoeE4Count, Education, Etiv, Gds, HippocampalVolume,
  Mmse, Moca, Nwbv, TemporalThickness, VentricularVolume, WmhLoad,
};
inline constexpr std::size_t kNumNumeric = 13;

struct NumericFieldInfo {
  std::string_view name;
  double lo;
  double hi;
  bool lo_open;
  bool hi_open;
  bool integral;
  bool required;
  bool fenced;  // subject to the IQR outlier fence
  std::string_view bound_text;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline constexpr std::array<NumericFieldInfo, kNumNumeric> kNumericFields = {{
    {"age", 18, 120, false, false, false, true, true, "[18,120]"},
    {"amygdala_volume", 0, kInf, false, true, false, false, true, "[0,inf)"},
    {"apoe_e4_count", 0, 2, false, false, true, false, false, "{0,1,2}"},
    {"education", 0, 30, false, false, false, false, true, "[0,30]"},
    {"etiv", 0, kInf, true, true, false, false, true, "(0,inf)"},
    {"gds", 0, 15, false, false, false, false, true, "[0,15]"},
    {"hippocampal_volume", 0, kInf, false, true, false, false, true, "[0,inf)"},
    {"mmse", 0, 30, false, false, false, true, true, "[0,30]"},
    {"moca", 0, 30, false, false, false, false, true, "[0,30]"},
    {"nwbv", 0, 1, true, true, false, false, true, "(0,1)"},
    {"temporal_thickness", 0, kInf, false, true, false, false, true, "[0,inf)"},
    {"ventricular_volume", 0, kInf, false, true, false, false, true, "[0,inf)"},
    {"wmh_load", 0, kInf, false, true, false, false, true, "[0,inf)"},
}};

constexpr const NumericFieldInfo& info(NumericField f) { return kNumericFields[static_cast<std::size_t>(f)]; }

struct PatientCase {
  std::string id;
  std::array<std::optional<double>, kNumNumeric> numeric{};
  double cdr = 0.0;
  Gender gender = Gender::Unknown;
  Handedness handedness = Handedness::Unknown;
  std::optional<int> ses;  // band 1..5

  std::optional<double>& operator[](NumericField f) { return numeric[static_cast<std::size_t>(f)]; }
  const std::optional<double>& operator[](NumericField f) const { return numeric[static_cast<std::size_t>(f)]; }

  double mmse() const { return numeric[static_cast<std::size_t>(NumericField::Mmse)].value_or(0.0); }
  double age() const { return numeric[static_cast<std::size_t>(NumericField::Age)].value_or(0.0); }

  friend bool operator==(const PatientCase&, const PatientCase&) = default;
};

struct CaseRecord {
  PatientCase patient;
  LabelSet labels;
  std::string narrative;
};

// ---------------------------------------------------------------------------
// Number formatting

// Shortest round-trip representation ("28", "0.74", "1450.5").
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // drop negative zero
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s.rfind("-0", 0) == 0 && std::stod(s) == 0.0) s.erase(0, 1);
  return s;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline std::string token_of(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return format_number(v.get<double>());
  return v.dump();
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline bool is_absent(const json& v) {
  return v.is_null() || (v.is_string() && trim(v.get<std::string>()).empty());
}

inline std::optional<double> parse_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = trim(v.get<std::string>());
    double out = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return out;
  }
  return std::nullopt;
}

[[noreturn]] inline void range_violation(std::string_view field, const json& value, std::string_view bound) {
  throw Error(ErrorCode::RangeViolation,
              std::string(field) + " = " + token_of(value) + " outside " + std::string(bound),
              {{"field", field}, {"value", value}, {"bound", bound}});
}

}  // namespace detail

/// Builds a PatientCase from a raw field map (JSON object). Unrecognized keys
/// are ignored; absent optional fields stay empty.
inline PatientCase validate_case(const json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::MissingRequired, "case must be an object", {{"field", "id"}});
  PatientCase c;

  auto find = [&](std::string_view key) -> const json* {
    auto it = raw.find(std::string(key));
    if (it == raw.end() || detail::is_absent(*it)) return nullptr;
    return &*it;
  };

  const json* id = find("id");
  if (!id) throw Error(ErrorCode::MissingRequired, "id is required", {{"field", "id"}});
  c.id = id->is_string() ? id->get<std::string>() : detail::token_of(*id);

  for (std::size_t i = 0; i < kNumNumeric; ++i) {
    const auto& fi = kNumericFields[i];
    const json* v = find(fi.name);
    if (!v) {
      if (fi.required)
        throw Error(ErrorCode::MissingRequired, std::string(fi.name) + " is required", {{"field", fi.name}});
      continue;
    }
    auto x = detail::parse_number(*v);
    if (!x || !std::isfinite(*x)) detail::range_violation(fi.name, *v, fi.bound_text);
    const bool below = fi.lo_open ? *x <= fi.lo : *x < fi.lo;
    const bool above = fi.hi_open ? *x >= fi.hi : *x > fi.hi;
    if (below || above) detail::range_violation(fi.name, *v, fi.bound_text);
    if (fi.integral && std::floor(*x) != *x) detail::range_violation(fi.name, *v, fi.bound_text);
    c.numeric[i] = *x;
  }

  const json* cdr = find("cdr");
  if (!cdr) throw Error(ErrorCode::MissingRequired, "cdr is required", {{"field", "cdr"}});
  {
    auto x = detail::parse_number(*cdr);
    if (!x || std::find(kCdrLevels.begin(), kCdrLevels.end(), *x) == kCdrLevels.end())
      throw Error(ErrorCode::UnknownCategory, "cdr must be one of 0, 0.5, 1, 2, 3",
                  {{"field", "cdr"}, {"token", detail::token_of(*cdr)}});
    c.cdr = *x;
  }

  if (const json* g = find("gender")) {
    const auto t = detail::lower(detail::token_of(*g));
    if (t == "female" || t == "f") c.gender = Gender::Female;
    else if (t == "male" || t == "m") c.gender = Gender::Male;
    else if (t == "other" || t == "unknown") c.gender = Gender::Unknown;
    else throw Error(ErrorCode::UnknownCategory, "unknown gender", {{"field", "gender"}, {"token", detail::token_of(*g)}});
  }

  if (const json* h = find("handedness")) {
    const auto t = detail::lower(detail::token_of(*h));
    if (t == "left" || t == "l") c.handedness = Handedness::Left;
    else if (t == "right" || t == "r") c.handedness = Handedness::Right;
    else if (t == "ambi" || t == "ambidextrous" || t == "a" || t == "unknown") c.handedness = Handedness::Unknown;
    else
      throw Error(ErrorCode::UnknownCategory, "unknown handedness",
                  {{"field", "handedness"}, {"token", detail::token_of(*h)}});
  }

  if (const json* s = find("ses")) {
    if (!(s->is_string() && detail::lower(s->get<std::string>()) == "unknown")) {
      auto x = detail::parse_number(*s);
      if (!x || std::floor(*x) != *x || *x < 1 || *x > 5)
        throw Error(ErrorCode::UnknownCategory, "ses must be a band 1-5 or unknown",
                    {{"field", "ses"}, {"token", detail::token_of(*s)}});
      c.ses = static_cast<int>(*x);
    }
  }
  return c;
}

inline json case_to_json(const PatientCase& c) {
  json j = json::object();
  j["id"] = c.id;
  for (std::size_t i = 0; i < kNumNumeric; ++i) {
    const auto& v = c.numeric[i];
    if (!v) continue;
    if (kNumericFields[i].integral) j[std::string(kNumericFields[i].name)] = static_cast<long long>(*v);
    else j[std::string(kNumericFields[i].name)] = *v;
  }
  j["cdr"] = c.cdr;
  static constexpr std::array<std::string_view, 3> kGender = {"female", "male", "unknown"};
  static constexpr std::array<std::string_view, 3> kHand = {"left", "right", "unknown"};
  j["gender"] = kGender[static_cast<std::size_t>(c.gender)];
  j["handedness"] = kHand[static_cast<std::size_t>(c.handedness)];
  if (c.ses) j["ses"] = *c.ses;
  return j;
}

/// Static range schema served to clients; mirrors validate_case exactly.
inline json case_schema() {
  json fields = json::array();
  fields.push_back({{"name", "id"}, {"type", "string"}, {"required", true}});
  for (const auto& fi : kNumericFields) {
    json f = {{"name", fi.name}, {"type", fi.integral ? "integer" : "number"}, {"required", fi.required},
              {"bound", fi.bound_text}, {"min", fi.lo}, {"min_exclusive", fi.lo_open},
              {"max_exclusive", fi.hi_open}};
    f["max"] = std::isfinite(fi.hi) ? json(fi.hi) : json(nullptr);
    fields.push_back(std::move(f));
  }
  fields.push_back({{"name", "cdr"}, {"type", "category"}, {"required", true}, {"values", kCdrLevels}});
  fields.push_back({{"name", "gender"}, {"type", "category"}, {"required", false},
                    {"values", {"female", "male", "other", "unknown"}}});
  fields.push_back({{"name", "handedness"}, {"type", "category"}, {"required", false},
                    {"values", {"left", "right", "ambi", "unknown"}}});
  fields.push_back({{"name", "ses"}, {"type", "category"}, {"required", false}, {"values", {1, 2, 3, 4, 5, "unknown"}}});
  return {{"format_version", 1}, {"fields", fields}, {"labels", kSubtypeNames}};
}

// ---------------------------------------------------------------------------
// Narrative rendering

namespace detail {

struct SentenceSpec {
  std::string_view field;
  std::string_view label;
  std::string_view unit;
  int decimals;  // -1: shortest representation
};

}  // namespace detail

/// Deterministic narrative: one sentence per present field, fields in
/// alphabetical order of name, volumes with one decimal.
inline std::string render_text(const PatientCase& c) {
  std::string out;
  auto sentence = [&](std::string_view label, const std::string& value, std::string_view unit) {
    if (!out.empty()) out.push_back(' ');
    out.append(label).append(" is ").append(value);
    if (!unit.empty()) out.append(" ").append(unit);
    out.push_back('.');
  };
  auto num = [&](NumericField f, std::string_view label, std::string_view unit, int decimals) {
    if (const auto& v = c[f]) sentence(label, decimals < 0 ? format_number(*v) : format_fixed(*v, decimals), unit);
  };

  num(NumericField::Age, "Age", "years", -1);
  num(NumericField::AmygdalaVolume, "Amygdala volume", "mL", 1);
  num(NumericField::ApoeE4Count, "APOE e4 allele count", "", -1);
  sentence("CDR", format_number(c.cdr), "");
  num(NumericField::Education, "Education", "years", -1);
  num(NumericField::Etiv, "eTIV", "mL", 1);
  num(NumericField::Gds, "GDS score", "", -1);
  if (c.gender != Gender::Unknown) sentence("Gender", c.gender == Gender::Female ? "female" : "male", "");
  if (c.handedness != Handedness::Unknown)
    sentence("Handedness", c.handedness == Handedness::Left ? "left" : "right", "");
  num(NumericField::HippocampalVolume, "Hippocampal volume", "mL", 1);
  num(NumericField::Mmse, "MMSE", "", -1);
  num(NumericField::Moca, "MoCA score", "", -1);
  num(NumericField::Nwbv, "nWBV", "", -1);
  if (c.ses) sentence("SES band", std::to_string(*c.ses), "");
  num(NumericField::TemporalThickness, "Temporal thickness", "mm", -1);
  num(NumericField::VentricularVolume, "Ventricular volume", "mL", 1);
  num(NumericField::WmhLoad, "WMH load", "", -1);
  return out;
}

inline CaseRecord make_record(PatientCase c, LabelSet labels) {
  CaseRecord r{std::move(c), labels, {}};
  r.narrative = render_text(r.patient);
  return r;
}

// ---------------------------------------------------------------------------
// Text sanitization

inline const std::vector<std::string>& default_visual_tokens() {
  static const std::vector<std::string> kTokens = {"Figure", "Fig.", "see image", "shown in image"};
  return kTokens;
}

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Case-insensitive search for `token` starting at a word boundary.
inline bool mentions(std::string_view sentence, std::string_view token) {
  if (token.empty() || token.size() > sentence.size()) return false;
  for (std::size_t i = 0; i + token.size() <= sentence.size(); ++i) {
    if (i > 0 && is_word_char(sentence[i - 1]) && is_word_char(token.front())) continue;
    bool match = true;
    for (std::size_t k = 0; k < token.size(); ++k) {
      if (std::tolower(static_cast<unsigned char>(sentence[i + k])) !=
          std::tolower(static_cast<unsigned char>(token[k]))) {
        match = false;
        break;
      }
    }
    if (match) return true;
  }
  return false;
}

// Splits into sentence pieces; each piece keeps its terminal punctuation and
// trailing whitespace. A period that closes "Fig." does not end a sentence.
inline std::vector<std::string_view> split_sentences(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch != '.' && ch != '!' && ch != '?') continue;
    if (i + 1 >= text.size() || !std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
    if (ch == '.' && i >= 3) {
      const auto prev = detail::lower(std::string(text.substr(i - 3, 3)));
      const bool word_start = i == 3 || !is_word_char(text[i - 4]);
      if (prev == "fig" && word_start) continue;
    }
    std::size_t end = i + 1;
    while (end < text.size() && std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    pieces.push_back(text.substr(start, end - start));
    start = end;
    i = end - 1;
  }
  if (start < text.size()) pieces.push_back(text.substr(start));
  return pieces;
}

}  // namespace detail

/// Removes every sentence that mentions a visual-reference token. Text with
/// nothing to remove is returned unchanged.
inline std::string sanitize_corpus_text(std::string_view text,
                                        const std::vector<std::string>& tokens = default_visual_tokens()) {
  const auto pieces = detail::split_sentences(text);
  std::string out;
  bool removed = false;
  for (auto piece : pieces) {
    bool drop = false;
    for (const auto& t : tokens)
      if (detail::mentions(piece, t)) {
        drop = true;
        break;
      }
    if (drop) removed = true;
    else out.append(piece);
  }
  if (!removed) return std::string(text);
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

enum class OutlierPolicy { Clip, Reject };

struct NumericStats {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;
  double lower = std::numeric_limits<double>::lowest();
  double upper = std::numeric_limits<double>::max();
  std::size_t count = 0;

  friend bool operator==(const NumericStats&, const NumericStats&) = default;
};

/// Categorical fields and their fixed code tables (code = index).
inline const std::vector<std::pair<std::string, std::vector<std::string>>>& categorical_code_tables() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kTables = {
      {"cdr", {"0", "0.5", "1", "2", "3"}},
      {"gender", {"female", "male", "unknown"}},
      {"handedness", {"left", "right", "unknown"}},
      {"ses", {"1", "2", "3", "4", "5", "unknown"}},
  };
  return kTables;
}

struct PreprocessStats {
  static constexpr int kFormatVersion = 1;
  std::array<NumericStats, kNumNumeric> numeric{};
  std::vector<std::pair<std::string, std::vector<std::string>>> categorical = categorical_code_tables();

  const NumericStats& operator[](NumericField f) const { return numeric[static_cast<std::size_t>(f)]; }
  NumericStats& operator[](NumericField f) { return numeric[static_cast<std::size_t>(f)]; }

  friend bool operator==(const PreprocessStats&, const PreprocessStats&) = default;
};

/// Linear-interpolation quantile of sorted data (q in [0, 1]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Fits z-score parameters and 1.5*IQR inlier fences per numeric field.
/// Mean and population std are computed over inliers; a zero std is flagged
/// constant and replaced by 1.
inline PreprocessStats fit_preprocess(const std::vector<CaseRecord>& corpus) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot fit preprocessing on an empty corpus");
  PreprocessStats stats;
  for (std::size_t f = 0; f < kNumNumeric; ++f) {
    std::vector<double> values;
    values.reserve(corpus.size());
    for (const auto& r : corpus)
      if (const auto& v = r.patient.numeric[f]) values.push_back(*v);
    auto& s = stats.numeric[f];
    s.count = values.size();
    if (values.empty()) {
      s.constant = true;
      continue;
    }
    std::sort(values.begin(), values.end());
    if (kNumericFields[f].fenced) {
      const double q1 = quantile_sorted(values, 0.25);
      const double q3 = quantile_sorted(values, 0.75);
      const double iqr = q3 - q1;
      s.lower = q1 - 1.5 * iqr;
      s.upper = q3 + 1.5 * iqr;
    } else {
      s.lower = kNumericFields[f].lo;
      s.upper = std::isfinite(kNumericFields[f].hi) ? kNumericFields[f].hi : std::numeric_limits<double>::max();
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : values)
      if (v >= s.lower && v <= s.upper) {
        sum += v;
        ++n;
      }
    s.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : values)
      if (v >= s.lower && v <= s.upper) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    s.constant = !(sd > 0.0);
    s.std = s.constant ? 1.0 : sd;
  }
  return stats;
}

// Feature layout: for each numeric field (alphabetical) a z-score slot and a
// presence bit, then one-hot blocks for cdr, gender, handedness and ses.
inline constexpr std::size_t kCdrOffset = 2 * kNumNumeric;
inline constexpr std::size_t kGenderOffset = kCdrOffset + 5;
inline constexpr std::size_t kHandednessOffset = kGenderOffset + 3;
inline constexpr std::size_t kSesOffset = kHandednessOffset + 3;
inline constexpr std::size_t kFeatureLength = kSesOffset + 6;

inline std::vector<std::string> feature_names() {
  std::vector<std::string> names;
  for (const auto& fi : kNumericFields) {
    names.push_back(std::string(fi.name) + ".z");
    names.push_back(std::string(fi.name) + ".present");
  }
  for (const auto& [field, codes] : categorical_code_tables())
    for (const auto& code : codes) names.push_back(field + "=" + code);
  return names;
}

inline std::vector<double> apply_preprocess(const PatientCase& c, const PreprocessStats& stats,
                                            OutlierPolicy policy = OutlierPolicy::Clip) {
  std::vector<double> x(kFeatureLength, 0.0);
  for (std::size_t f = 0; f < kNumNumeric; ++f) {
    const auto& v = c.numeric[f];
    if (!v) continue;
    const auto& s = stats.numeric[f];
    double value = *v;
    if (value < s.lower || value > s.upper) {
      if (policy == OutlierPolicy::Reject)
        throw Error(ErrorCode::OutlierRejected, std::string(kNumericFields[f].name) + " outside inlier bounds",
                    {{"field", kNumericFields[f].name}, {"value", value}, {"lower", s.lower}, {"upper", s.upper}});
      value = std::clamp(value, s.lower, s.upper);
    }
    x[2 * f] = (value - s.mean) / s.std;
    x[2 * f + 1] = 1.0;
  }
  const auto cdr_code = static_cast<std::size_t>(
      std::find(kCdrLevels.begin(), kCdrLevels.end(), c.cdr) - kCdrLevels.begin());
  x[kCdrOffset + std::min<std::size_t>(cdr_code, 4)] = 1.0;
  x[kGenderOffset + static_cast<std::size_t>(c.gender)] = 1.0;
  x[kHandednessOffset + static_cast<std::size_t>(c.handedness)] = 1.0;
  x[kSesOffset + (c.ses ? static_cast<std::size_t>(*c.ses - 1) : 5)] = 1.0;
  return x;
}

inline json stats_to_json(const PreprocessStats& stats) {
  json numeric = json::object();
  for (std::size_t f = 0; f < kNumNumeric; ++f) {
    const auto& s = stats.numeric[f];
    numeric[std::string(kNumericFields[f].name)] = {{"mean", s.mean}, {"std", s.std}, {"constant", s.constant},
                                                    {"lower", s.lower}, {"upper", s.upper}, {"count", s.count}};
  }
  json categorical = json::object();
  for (const auto& [field, codes] : stats.categorical) categorical[field] = codes;
  return {{"format_version", PreprocessStats::kFormatVersion}, {"numeric", numeric}, {"categorical", categorical}};
}

inline PreprocessStats stats_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != PreprocessStats::kFormatVersion)
      throw Error(ErrorCode::VersionMismatch, "unsupported preprocess stats version",
                  {{"found", j.at("format_version")}, {"expected", PreprocessStats::kFormatVersion}});
    PreprocessStats stats;
    for (std::size_t f = 0; f < kNumNumeric; ++f) {
      const auto& n = j.at("numeric").at(std::string(kNumericFields[f].name));
      auto& s = stats.numeric[f];
      s.mean = n.at("mean").get<double>();
      s.std = n.at("std").get<double>();
      s.constant = n.at("constant").get<bool>();
      s.lower = n.at("lower").get<double>();
      s.upper = n.at("upper").get<double>();
      s.count = n.at("count").get<std::size_t>();
    }
    stats.categorical.clear();
    for (const auto& [field, codes] : categorical_code_tables())
      stats.categorical.emplace_back(field, j.at("categorical").at(field).get<std::vector<std::string>>());
    return stats;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("malformed preprocess stats: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Corpus import / export

inline json record_to_json(const CaseRecord& r) {
  json j = case_to_json(r.patient);
  j["labels"] = labels_to_json(r.labels);
  return j;
}

inline CaseRecord record_from_json(const json& j) {
  LabelSet labels;
  if (auto it = j.find("labels"); it != j.end() && !it->is_null()) labels = labels_from_json(*it);
  return make_record(validate_case(j), labels);
}

inline std::string to_jsonl(const std::vector<CaseRecord>& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += record_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

struct LineReject {
  std::size_t line;  // 1-based
  std::string reason;
  std::string message;
};

struct ImportResult {
  std::vector<CaseRecord> records;
  std::vector<LineReject> rejected;
};

/// Parses JSON-Lines. Blank lines are skipped; invalid lines and ids repeated
/// within the batch (or present in `existing_ids`) are reported per line.
inline ImportResult parse_jsonl(std::string_view text, const std::unordered_set<std::string>& existing_ids = {}) {
  ImportResult result;
  std::unordered_set<std::string> seen = existing_ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = detail::trim(text.substr(pos, nl - pos));
    ++line_no;
    pos = nl + 1;
    if (line.empty()) {
      if (nl == text.size()) break;
      continue;
    }
    try {
      auto rec = record_from_json(json::parse(line));
      if (!seen.insert(rec.patient.id).second)
        throw Error(ErrorCode::DuplicateId, "duplicate id " + rec.patient.id, {{"id", rec.patient.id}});
      result.records.push_back(std::move(rec));
    } catch (const Error& e) {
      result.rejected.push_back({line_no, std::string(to_string(e.code())), e.message()});
    } catch (const json::exception& e) {
      result.rejected.push_back({line_no, "ParseFailure", e.what()});
    }
    if (nl == text.size()) break;
  }
  return result;
}

/// Strict JSONL load: any rejected line is an error.
inline std::vector<CaseRecord> load_jsonl(std::string_view text) {
  auto r = parse_jsonl(text);
  if (!r.rejected.empty()) {
    const auto& first = r.rejected.front();
    throw Error(ErrorCode::BadRequest, "line " + std::to_string(first.line) + ": " + first.message,
                {{"line", first.line}, {"reason", first.reason}});
  }
  return std::move(r.records);
}

/// CSV header names map onto PatientCase fields case-insensitively. Besides
/// the exact field names, OASIS-style headers are accepted:
///   ID -> id, M/F -> gender, Hand -> handedness, Educ -> education,
///   eTIV -> etiv, nWBV -> nwbv, MoCA -> moca, APOE -> apoe_e4_count,
///   Labels -> labels (semicolon-separated subtype names).
/// Unrecognized columns are ignored; empty cells are absent values.
inline const std::unordered_map<std::string, std::string>& csv_header_aliases() {
  static const std::unordered_map<std::string, std::string> kAliases = {
      {"id", "id"}, {"subject", "id"}, {"m/f", "gender"}, {"sex", "gender"}, {"gender", "gender"},
      {"hand", "handedness"}, {"handedness", "handedness"}, {"educ", "education"}, {"education", "education"},
      {"ses", "ses"}, {"age", "age"}, {"mmse", "mmse"}, {"cdr", "cdr"}, {"etiv", "etiv"}, {"nwbv", "nwbv"},
      {"moca", "moca"}, {"gds", "gds"}, {"apoe", "apoe_e4_count"}, {"apoe_e4_count", "apoe_e4_count"},
      {"hippocampal_volume", "hippocampal_volume"}, {"amygdala_volume", "amygdala_volume"},
      {"ventricular_volume", "ventricular_volume"}, {"temporal_thickness", "temporal_thickness"},
      {"wmh_load", "wmh_load"}, {"wmh", "wmh_load"}, {"labels", "labels"},
  };
  return kAliases;
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

}  // namespace detail

inline ImportResult parse_csv(std::string_view text) {
  ImportResult result;
  std::vector<std::string> lines;
  {
    std::string line;
    std::istringstream in{std::string(text)};
    while (std::getline(in, line)) lines.push_back(line);
  }
  if (lines.empty()) return result;
  const auto header = detail::split_csv_line(lines[0]);
  std::vector<std::string> mapped(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto& aliases = csv_header_aliases();
    if (auto it = aliases.find(detail::lower(header[i])); it != aliases.end()) mapped[i] = it->second;
  }
  std::unordered_set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (detail::trim(lines[ln]).empty()) continue;
    const auto cells = detail::split_csv_line(lines[ln]);
    json raw = json::object();
    std::string labels_cell;
    for (std::size_t i = 0; i < cells.size() && i < mapped.size(); ++i) {
      if (mapped[i].empty() || cells[i].empty()) continue;
      if (mapped[i] == "labels") labels_cell = cells[i];
      else raw[mapped[i]] = cells[i];
    }
    try {
      LabelSet labels;
      std::size_t p = 0;
      while (p < labels_cell.size()) {
        auto q = labels_cell.find(';', p);
        if (q == std::string::npos) q = labels_cell.size();
        const auto name = detail::trim(std::string_view(labels_cell).substr(p, q - p));
        if (!name.empty()) {
          auto l = subtype_from_name(name);
          if (!l) throw Error(ErrorCode::UnknownCategory, "unknown label " + name, {{"field", "labels"}, {"token", name}});
          labels.insert(*l);
        }
        p = q + 1;
      }
      auto rec = make_record(validate_case(raw), labels);
      if (!seen.insert(rec.patient.id).second)
        throw Error(ErrorCode::DuplicateId, "duplicate id " + rec.patient.id, {{"id", rec.patient.id}});
      result.records.push_back(std::move(rec));
    } catch (const Error& e) {
      result.rejected.push_back({ln + 1, std::string(to_string(e.code())), e.what()});
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic cohort generator

/// Synthetic cohort parameters. Records belong to strata: groups of patients
/// with a shared feature signature (head size, education, SES, handedness,
/// gender, disease severity) and shared stratum-level subtype labels (Familial or
/// Sporadic, Atypical). The onset label is per record and follows age
/// (EarlyOnset below 65, LateOnset from 65).
struct GeneratorConfig {
  int n = 1105;
  double mix_single = 0.6;
  double mix_double = 0.3;
  double mix_triple = 0.1;
  // Multiplier on every field's within-stratum noise.
  double noise = 1.0;
  // Probability that a record's own features carry none of its stratum-label
  // shifts; its labels then show only through its neighbors.
  double neighbor_signal = 0.85;
  // Noise sd on each label-bearing field, in units of that label's shift.
  double label_noise = 0.2;
  int stratum_size = 30;
  // Probability that each optional extended field is absent.
  double missing_rate = 0.05;
  double early_onset_rate = 0.3;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

inline json generator_config_to_json(const GeneratorConfig& c) {
  return {{"n", c.n}, {"mix", {c.mix_single, c.mix_double, c.mix_triple}}, {"noise", c.noise},
          {"neighbor_signal", c.neighbor_signal}, {"label_noise", c.label_noise}, {"stratum_size", c.stratum_size},
          {"missing_rate", c.missing_rate}, {"early_onset_rate", c.early_onset_rate}};
}

inline GeneratorConfig generator_config_from_json(const json& j, GeneratorConfig c = {}) {
  c.n = j.value("n", c.n);
  if (auto it = j.find("mix"); it != j.end()) {
    const auto mix = it->get<std::vector<double>>();
    if (mix.size() != 3) throw Error(ErrorCode::BadConfig, "mix needs three entries");
    c.mix_single = mix[0];
    c.mix_double = mix[1];
    c.mix_triple = mix[2];
  }
  c.noise = j.value("noise", c.noise);
  c.neighbor_signal = j.value("neighbor_signal", c.neighbor_signal);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.stratum_size = j.value("stratum_size", c.stratum_size);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  c.early_onset_rate = j.value("early_onset_rate", c.early_onset_rate);
  return c;
}

// Splits `total` proportionally to `weights` with the largest-remainder rule;
// ties go to the earlier entry.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    rema.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < rema.size(); ++k, ++assigned) ++counts[rema[k].second];
  // Only reachable when weights sum below one; pad the largest class.
  if (assigned < total) counts[rema.front().second] += total - assigned;
  return counts;
}

inline std::vector<CaseRecord> generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed) {
  const double mix_sum = cfg.mix_single + cfg.mix_double + cfg.mix_triple;
  if (cfg.n <= 0) throw Error(ErrorCode::BadConfig, "n must be positive", {{"n", cfg.n}});
  if (std::abs(mix_sum - 1.0) > 1e-9 || cfg.mix_single < 0 || cfg.mix_double < 0 || cfg.mix_triple < 0)
    throw Error(ErrorCode::BadConfig, "cardinality mix must be non-negative and sum to 1", {{"sum", mix_sum}});
  auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!unit(cfg.neighbor_signal) || !unit(cfg.missing_rate) || !unit(cfg.early_onset_rate) || cfg.noise < 0 || cfg.label_noise < 0 ||
      cfg.stratum_size < 1)
    throw Error(ErrorCode::BadConfig, "generator fractions must lie in [0,1], noise and label_noise >= 0, stratum_size >= 1");

  Rng rng(seed);
  const double noise = cfg.noise;
  const double ln = cfg.label_noise;
  const auto n = static_cast<std::size_t>(cfg.n);
  const auto per_class = apportion(n, {cfg.mix_single, cfg.mix_double, cfg.mix_triple});

  struct Stratum {
    LabelSet labels;
    double etiv_z, edu_z, severity;
    int ses;
    Handedness hand;
    Gender gender;
  };

  std::vector<std::pair<Stratum, std::size_t>> strata;  // (stratum, member count)
  for (std::size_t cls = 0; cls < 3; ++cls) {
    const std::size_t members = per_class[cls];
    if (members == 0) continue;
    const std::size_t count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(double(members) / double(cfg.stratum_size))));
    for (std::size_t s = 0; s < count; ++s) {
      Stratum st{};
      if (cls == 1) {
        static constexpr std::array<Subtype, 3> kChoices = {Subtype::Familial, Subtype::Sporadic, Subtype::Atypical};
        st.labels.insert(kChoices[rng.below(3)]);
      } else if (cls == 2) {
        st.labels.insert(rng.bernoulli(0.5) ? Subtype::Familial : Subtype::Sporadic);
        st.labels.insert(Subtype::Atypical);
      }
      st.etiv_z = rng.normal();
      st.edu_z = rng.normal();
      st.severity = rng.uniform();
      st.ses = 1 + static_cast<int>(rng.below(5));
      const double h = rng.uniform();
      st.hand = h < 0.85 ? Handedness::Right : (h < 0.95 ? Handedness::Left : Handedness::Unknown);
      const double gu = rng.uniform();
      st.gender = gu < 0.55 ? Gender::Female : (gu < 0.98 ? Gender::Male : Gender::Unknown);
      const std::size_t size = members / count + (s < members % count ? 1 : 0);
      strata.emplace_back(st, size);
    }
  }

  auto clampd = [](double v, double lo, double hi) { return std::clamp(v, lo, hi); };
  auto round_to = [](double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return std::round(v * scale) / scale;
  };

  std::vector<std::pair<PatientCase, LabelSet>> rows;
  rows.reserve(n);
  for (const auto& [st, size] : strata) {
    for (std::size_t m = 0; m < size; ++m) {
      PatientCase c;
      LabelSet labels = st.labels;
      const bool early = rng.bernoulli(cfg.early_onset_rate);
      labels.insert(early ? Subtype::EarlyOnset : Subtype::LateOnset);
      const double age = early ? 45.0 + double(rng.below(20)) : 65.0 + double(rng.below(28));

      // A silent record shows none of its stratum-label shifts.
      const bool silent = rng.bernoulli(cfg.neighbor_signal);
      auto shift = [&](Subtype s) { return st.labels.contains(s) && !silent; };
      const bool fam_hippo = shift(Subtype::Familial), fam_apoe = shift(Subtype::Familial);
      const bool spo_amyg = shift(Subtype::Sporadic), spo_wmh = shift(Subtype::Sporadic);
      const bool aty_moca = shift(Subtype::Atypical), aty_temp = shift(Subtype::Atypical),
                 aty_gds = shift(Subtype::Atypical);

      const double sev = clampd(st.severity + 0.04 * noise * rng.normal(), 0.0, 1.0);
      const double sev_cdr = sev + 0.04 * noise * rng.normal();
      c.cdr = sev_cdr < 0.15 ? 0.0 : sev_cdr < 0.4 ? 0.5 : sev_cdr < 0.65 ? 1.0 : sev_cdr < 0.85 ? 2.0 : 3.0;

      const double mmse = std::round(clampd(29.0 - 20.0 * sev + 1.2 * noise * rng.normal(), 0, 30));
      const double moca =
          std::round(clampd(mmse - 2.0 - (aty_moca ? 5.0 : 0.0) + 5.0 * ln * rng.normal(), 0, 30));
      const double gds = std::round(clampd(3.0 + 2.0 * sev + (aty_gds ? 5.0 : 0.0) + 5.0 * ln * rng.normal(), 0, 15));
      const double etiv = round_to(std::max(1000.0, 1500.0 + 150.0 * st.etiv_z + 25.0 * noise * rng.normal()), 1);
      const double nwbv = round_to(clampd(0.80 - 0.12 * sev + 0.008 * noise * rng.normal(), 0.55, 0.90), 3);
      const double edu = std::round(clampd(14.0 + 3.0 * st.edu_z + 0.7 * noise * rng.normal(), 0, 30));
      const double hippo =
          round_to(std::max(0.5, 3.5 - 1.0 * sev - (fam_hippo ? 0.7 : 0.0) + 0.7 * ln * rng.normal()), 2);
      const double amyg =
          round_to(std::max(0.3, 1.7 - 0.3 * sev - (spo_amyg ? 0.4 : 0.0) + 0.4 * ln * rng.normal()), 2);
      const double vent =
          round_to(std::max(5.0, 20.0 + 35.0 * sev + 0.2 * (age - 70.0) + 3.0 * noise * rng.normal()), 1);
      const double temp =
          round_to(std::max(1.0, 2.8 - 0.4 * sev - (aty_temp ? 0.35 : 0.0) + 0.35 * ln * rng.normal()), 2);
      const double wmh =
          round_to(std::max(0.0, 3.0 + 0.08 * (age - 70.0) + (spo_wmh ? 5.0 : 0.0) + 5.0 * ln * rng.normal()), 2);
      const double u = rng.uniform();
      const double apoe = fam_apoe ? (u < 0.1 ? 0.0 : u < 0.65 ? 1.0 : 2.0) : (u < 0.72 ? 0.0 : u < 0.96 ? 1.0 : 2.0);

      c[NumericField::Age] = age;
      c[NumericField::Mmse] = mmse;
      c[NumericField::Etiv] = etiv;
      c[NumericField::Nwbv] = nwbv;
      c[NumericField::Education] = edu;
      const std::array<std::pair<NumericField, double>, 8> optional_fields = {{
          {NumericField::HippocampalVolume, hippo}, {NumericField::AmygdalaVolume, amyg},
          {NumericField::VentricularVolume, vent}, {NumericField::TemporalThickness, temp},
          {NumericField::WmhLoad, wmh}, {NumericField::ApoeE4Count, apoe},
          {NumericField::Moca, moca}, {NumericField::Gds, gds},
      }};
      for (const auto& [field, value] : optional_fields)
        if (!rng.bernoulli(cfg.missing_rate)) c[field] = value;

      c.gender = st.gender;
      c.handedness = st.hand;
      c.ses = st.ses;
      rows.emplace_back(std::move(c), labels);
    }
  }

  rng.shuffle(rows);
  const std::size_t width = std::max<std::size_t>(5, std::to_string(n).size());
  std::vector<CaseRecord> corpus;
  corpus.reserve(n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto id = std::to_string(i + 1);
    rows[i].first.id = "p" + std::string(width - id.size(), '0') + id;
    corpus.push_back(make_record(std::move(rows[i].first), rows[i].second));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct CorpusSplits {
  std::vector<CaseRecord> train;
  std::vector<CaseRecord> val;
  std::vector<CaseRecord> test;
};

/// Deterministic stratified split. Records are shuffled inside each
/// cardinality class and interleaved by fractional rank, so every contiguous
/// cut of the ordering is close to the class mix; split sizes follow the
/// largest-remainder rule. Each split keeps the corpus order.
inline CorpusSplits split_corpus(const std::vector<CaseRecord>& corpus, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorCode::BadRatios, "split ratios must be positive and sum to 1",
                {{"ratios", {ratios.train, ratios.val, ratios.test}}});

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 4> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    groups[static_cast<std::size_t>(corpus[i].labels.cardinality_class())].push_back(i);

  struct Slot {
    double rank;
    std::size_t group;
    std::size_t index;
  };
  std::vector<Slot> order;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    rng.shuffle(groups[g]);
    const double ng = static_cast<double>(groups[g].size());
    for (std::size_t k = 0; k < groups[g].size(); ++k)
      order.push_back({(static_cast<double>(k) + 0.5) / ng, g, groups[g][k]});
  }
  std::sort(order.begin(), order.end(), [](const Slot& a, const Slot& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.group < b.group;
  });

  const auto sizes = apportion(corpus.size(), {ratios.train, ratios.val, ratios.test});
  std::vector<int> assignment(corpus.size(), 0);
  for (std::size_t p = 0; p < order.size(); ++p)
    assignment[order[p].index] = p < sizes[0] ? 0 : (p < sizes[0] + sizes[1] ? 1 : 2);

  CorpusSplits out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& dst = assignment[i] == 0 ? out.train : (assignment[i] == 1 ? out.val : out.test);
    dst.push_back(corpus[i]);
  }
  return out;
}

}  // namespace brains
