#include "sar/records.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iostream>
#include <set>

using nlohmann::json;

namespace sar {

std::string GenerationRecord::surface() const {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& id,
                       const std::string& field, const std::string& why) {
  std::string msg;
  if (!id.empty()) msg += "record '" + id + "': ";
  msg += "field '" + field + "' " + why;
  throw DatasetError(line, msg);
}

const json& require(const json& obj, const char* key, std::size_t line,
                    const std::string& id, const std::string& field) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(line, id, field, "is missing");
  return *it;
}

std::string require_string(const json& obj, const char* key, std::size_t line,
                           const std::string& id, const std::string& field) {
  const json& v = require(obj, key, line, id, field);
  if (!v.is_string()) fail(line, id, field, "must be a string");
  return v.get<std::string>();
}

GenerationRecord generation_from_json(const json& j, GenerationKind kind,
                                      const LoadOptions& options,
                                      std::size_t line, const std::string& id,
                                      const std::string& field) {
  if (!j.is_object()) fail(line, id, field, "must be an object");
  GenerationRecord g;
  g.kind = kind;
  g.text = require_string(j, "text", line, id, field + ".text");
  const json& tokens = require(j, "tokens", line, id, field + ".tokens");
  if (!tokens.is_array()) fail(line, id, field + ".tokens", "must be an array");
  const double floor = std::log(options.probability_floor);
  g.tokens.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string tf = field + ".tokens[" + std::to_string(i) + "]";
    const json& t = tokens[i];
    if (!t.is_object()) fail(line, id, tf, "must be an object");
    TokenEvent ev;
    ev.text = require_string(t, "text", line, id, tf + ".text");
    const json& lp = require(t, "logprob", line, id, tf + ".logprob");
    if (!lp.is_number()) fail(line, id, tf + ".logprob", "must be a number");
    ev.logprob = lp.get<double>();
    if (!std::isfinite(ev.logprob) || ev.logprob > 0.0) {
      fail(line, id, tf + ".logprob",
           "must be finite and <= 0 (got " + lp.dump() + ")");
    }
    ev.logprob = std::max(ev.logprob, floor);
    g.tokens.push_back(std::move(ev));
  }
  return g;
}

json generation_to_json(const GenerationRecord& g) {
  json tokens = json::array();
  for (const auto& t : g.tokens) {
    tokens.push_back({{"text", t.text}, {"logprob", t.logprob}});
  }
  return {{"text", g.text}, {"tokens", std::move(tokens)}};
}

void warn(const LoadOptions& options, const std::string& msg) {
  if (options.on_warning) {
    options.on_warning(msg);
  } else {
    std::cerr << "warning: " << msg << '\n';
  }
}

void check_surface(const GenerationRecord& g, const LoadOptions& options,
                   std::size_t line, const std::string& id,
                   const std::string& field) {
  if (g.surface() != g.text) {
    warn(options, (line ? "line " + std::to_string(line) + ": " : "") +
                      "record '" + id + "': " + field +
                      ".text differs from its joined tokens; using tokens");
  }
}

void validate_generation(const GenerationRecord& g, std::size_t line,
                         const std::string& id, const std::string& field) {
  if (g.tokens.empty()) fail(line, id, field + ".tokens", "must be non-empty");
  for (std::size_t i = 0; i < g.tokens.size(); ++i) {
    const std::string tf = field + ".tokens[" + std::to_string(i) + "]";
    if (g.tokens[i].text.empty()) fail(line, id, tf + ".text", "is empty");
    const double lp = g.tokens[i].logprob;
    if (!std::isfinite(lp) || lp > 0.0) {
      fail(line, id, tf + ".logprob", "must be finite and <= 0");
    }
  }
}

}  // namespace

void validate(const QuestionRecord& q, std::size_t line) {
  if (q.id.empty()) fail(line, q.id, "id", "must be non-empty");
  if (q.references.empty()) fail(line, q.id, "references", "must be non-empty");
  if (q.most_likely.kind != GenerationKind::most_likely) {
    fail(line, q.id, "most_likely", "must have kind most_likely");
  }
  validate_generation(q.most_likely, line, q.id, "most_likely");
  if (q.sampled.empty()) fail(line, q.id, "sampled", "must hold K >= 1 generations");
  for (std::size_t k = 0; k < q.sampled.size(); ++k) {
    const std::string f = "sampled[" + std::to_string(k) + "]";
    if (q.sampled[k].kind != GenerationKind::sampled) {
      fail(line, q.id, f, "must have kind sampled");
    }
    validate_generation(q.sampled[k], line, q.id, f);
  }
  for (const auto& [key, v] : q.precomputed_sims) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(line, q.id, "sims[" + key + "]", "must lie in [0,1]");
    }
  }
}

QuestionRecord question_from_json(const json& j, const LoadOptions& options,
                                  std::size_t line) {
  if (!j.is_object()) throw DatasetError(line, "expected a JSON object");
  QuestionRecord q;
  q.id = require_string(j, "id", line, "", "id");
  q.prompt = require_string(j, "prompt", line, q.id, "prompt");

  const json& refs = require(j, "references", line, q.id, "references");
  if (!refs.is_array()) fail(line, q.id, "references", "must be an array");
  for (const auto& r : refs) {
    if (!r.is_string()) fail(line, q.id, "references", "must hold strings");
    q.references.push_back(r.get<std::string>());
  }

  q.most_likely =
      generation_from_json(require(j, "most_likely", line, q.id, "most_likely"),
                           GenerationKind::most_likely, options, line, q.id,
                           "most_likely");
  const json& sampled = require(j, "sampled", line, q.id, "sampled");
  if (!sampled.is_array()) fail(line, q.id, "sampled", "must be an array");
  for (std::size_t k = 0; k < sampled.size(); ++k) {
    q.sampled.push_back(generation_from_json(sampled[k], GenerationKind::sampled,
                                             options, line, q.id,
                                             "sampled[" + std::to_string(k) + "]"));
  }

  if (auto it = j.find("sims"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) fail(line, q.id, "sims", "must be an object");
    for (const auto& [key, v] : it->items()) {
      if (!v.is_number()) fail(line, q.id, "sims[" + key + "]", "must be a number");
      q.precomputed_sims.emplace(key, v.get<double>());
    }
  }

  validate(q, line);
  check_surface(q.most_likely, options, line, q.id, "most_likely");
  for (std::size_t k = 0; k < q.sampled.size(); ++k) {
    check_surface(q.sampled[k], options, line, q.id,
                  "sampled[" + std::to_string(k) + "]");
  }
  return q;
}

json question_to_json(const QuestionRecord& q) {
  json sampled = json::array();
  for (const auto& g : q.sampled) sampled.push_back(generation_to_json(g));
  json j = {{"id", q.id},
            {"prompt", q.prompt},
            {"references", q.references},
            {"most_likely", generation_to_json(q.most_likely)},
            {"sampled", std::move(sampled)}};
  if (!q.precomputed_sims.empty()) j["sims"] = q.precomputed_sims;
  return j;
}

std::vector<QuestionRecord> load_dataset(const std::filesystem::path& path,
                                         const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DatasetError(0, "cannot open dataset " + path.string());
  std::vector<QuestionRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetError(lineno, std::string("JSON parse error: ") + e.what());
    }
    QuestionRecord q = question_from_json(j, options, lineno);
    if (!ids.insert(q.id).second) {
      throw DatasetError(lineno, "record '" + q.id + "': field 'id' is not unique");
    }
    out.push_back(std::move(q));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<QuestionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& q : records) out << question_to_json(q).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

double sentence_logprob(const GenerationRecord& g) {
  double sum = 0.0;
  for (const auto& t : g.tokens) sum += t.logprob;
  return sum;
}

std::string sha256_hex(std::string_view text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string pair_key(std::string_view a, std::string_view b) {
  std::string ha = sha256_hex(a);
  std::string hb = sha256_hex(b);
  return ha <= hb ? ha + hb : hb + ha;
}

}  // namespace sar
