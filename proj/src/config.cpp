#include "biocular/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "biocular/errors.hpp"

namespace biocular {

RenderOptions DataConfig::render_options() const {
  RenderOptions o;
  if (scheme == "fine10") o.scheme = ClassScheme::kFine10;
  else if (scheme == "coarse4") o.scheme = ClassScheme::kCoarse4;
  else throw ConfigError("data.scheme must be coarse4 or fine10, got " + scheme);
  o.smooth = smooth;
  return o;
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"procedural_count", c.procedural_count}, {"scheme", c.scheme},           {"smooth", c.smooth},
       {"annotations", c.annotations},           {"triplets", c.triplets},       {"validation", c.validation},
       {"holdout", c.holdout},                   {"annotator_iterations", c.annotator_iterations}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  c.procedural_count = j.at("procedural_count");
  c.scheme = j.at("scheme");
  c.smooth = j.at("smooth");
  c.annotations = j.at("annotations");
  c.triplets = j.at("triplets");
  c.validation = j.at("validation");
  c.holdout = j.at("holdout");
  c.annotator_iterations = j.at("annotator_iterations");
}

void to_json(nlohmann::json& j, const PathsConfig& c) { j = {{"work_dir", c.work_dir}}; }
void from_json(const nlohmann::json& j, PathsConfig& c) { c.work_dir = j.at("work_dir"); }

void RunConfig::validate() const {
  synthesis.validate();
  train.validate();
  smg.validate();
  segmenter.validate();
  (void)data.render_options();
  if (data.procedural_count < 1 || data.annotations < 1 || data.triplets < 0 || data.validation < 0 ||
      data.holdout < 0 || data.annotator_iterations < 0)
    throw ConfigError("data counts must be non-negative (procedural_count and annotations >= 1)");
  if (paths.work_dir.empty()) throw ConfigError("paths.work_dir must not be empty");
}

nlohmann::json RunConfig::to_json() const {
  return {{"run", {{"seed", seed}}}, {"synthesis", synthesis}, {"train", train}, {"smg", smg},
          {"segmenter", segmenter},  {"data", data},           {"paths", paths}};
}

namespace {

class TomlParser {
 public:
  TomlParser(const std::string& text, std::string origin) : text_(text), origin_(std::move(origin)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    std::string section;
    root[section] = nlohmann::json::object();
    while (pos_ < text_.size()) {
      skip_blank();
      if (pos_ >= text_.size()) break;
      const char c = text_[pos_];
      if (c == '\n') {
        ++pos_;
        ++line_;
        continue;
      }
      if (c == '#') {
        skip_comment();
        continue;
      }
      if (c == '[') {
        ++pos_;
        section = read_key();
        skip_blank();
        expect(']');
        if (root.contains(section) && section != "") fail("duplicate section [" + section + "]");
        root[section] = nlohmann::json::object();
        end_line();
        continue;
      }
      const auto key = read_key();
      skip_blank();
      expect('=');
      skip_blank();
      auto value = read_value();
      if (root[section].contains(key)) fail("duplicate key '" + key + "'");
      root[section][key] = std::move(value);
      end_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(origin_ + ":" + std::to_string(line_) + ": " + msg);
  }

  void skip_blank() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  void skip_comment() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  void skip_space_and_newlines() {
    for (;;) {
      skip_blank();
      if (pos_ < text_.size() && text_[pos_] == '#') skip_comment();
      if (pos_ < text_.size() && text_[pos_] == '\n') {
        ++pos_;
        ++line_;
        continue;
      }
      return;
    }
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void end_line() {
    skip_blank();
    if (pos_ < text_.size() && text_[pos_] == '#') skip_comment();
    if (pos_ < text_.size() && text_[pos_] != '\n') fail("unexpected trailing characters");
  }

  std::string read_key() {
    skip_blank();
    if (pos_ < text_.size() && text_[pos_] == '"') return read_string();
    std::string key;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
        key.push_back(c);
        ++pos_;
      } else {
        break;
      }
    }
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::string read_string() {
    expect('"');
    std::string s;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      char c = text_[pos_++];
      if (c == '\n') fail("unterminated string");
      if (c == '\\') {
        if (pos_ >= text_.size()) fail("unterminated escape");
        const char e = text_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      s.push_back(c);
    }
    expect('"');
    return s;
  }

  nlohmann::json read_value() {
    if (pos_ >= text_.size()) fail("missing value");
    const char c = text_[pos_];
    if (c == '"') return read_string();
    if (c == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      skip_space_and_newlines();
      while (pos_ < text_.size() && text_[pos_] != ']') {
        arr.push_back(read_value());
        skip_space_and_newlines();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_space_and_newlines();
        } else {
          break;
        }
      }
      expect(']');
      return arr;
    }
    if (c == '{') {
      ++pos_;
      nlohmann::json obj = nlohmann::json::object();
      skip_blank();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        const auto key = read_key();
        skip_blank();
        expect('=');
        skip_blank();
        obj[key] = read_value();
        skip_blank();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_blank();
        } else {
          break;
        }
      }
      expect('}');
      return obj;
    }
    std::string tok;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != ',' &&
           text_[pos_] != ']' && text_[pos_] != '}' && text_[pos_] != '#')
      tok.push_back(text_[pos_++]);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char ch : tok)
      if (ch != '_') digits.push_back(ch);
    if (digits.empty()) fail("missing value");
    try {
      std::size_t used = 0;
      const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
      if (!is_float) {
        if (digits[0] == '-') {
          const auto v = std::stoll(digits, &used);
          if (used == digits.size()) return v;
        } else {
          const auto v = std::stoull(digits[0] == '+' ? digits.substr(1) : digits, &used);
          if (used == digits.size() - (digits[0] == '+' ? 1 : 0)) return v;
        }
      } else {
        const auto v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + tok + "'");
  }

  const std::string& text_;
  std::string origin_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

/// Overlays `given` on `defaults`, rejecting unknown keys and mismatched types.
nlohmann::json overlay(const nlohmann::json& defaults, const nlohmann::json& given, const std::string& where) {
  auto out = defaults;
  for (const auto& [key, value] : given.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown key '" + key + "' in [" + where + "]");
    const auto& def = defaults.at(key);
    const bool ok = def.is_null() ? value.is_number()
                    : def.is_number_float() ? value.is_number()
                    : def.is_number_integer() ? value.is_number_integer()
                    : def.is_boolean() ? value.is_boolean()
                    : def.is_string() ? value.is_string()
                    : def.is_object() ? value.is_object()
                                      : false;
    if (!ok) throw ConfigError("key '" + key + "' in [" + where + "] has the wrong type: " + value.dump());
    if (def.is_number_integer() && def.is_number_unsigned() == false && value.is_number_unsigned())
      out[key] = value.get<std::int64_t>();
    else
      out[key] = value;
  }
  return out;
}

template <typename T>
void apply(const nlohmann::json& root, const char* section, T& target) {
  if (!root.contains(section)) return;
  const auto merged = overlay(nlohmann::json(target), root.at(section), section);
  try {
    target = merged.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid [") + section + "]: " + e.what());
  }
}

}  // namespace

nlohmann::json parse_toml(const std::string& text, const std::string& origin) {
  return TomlParser(text, origin).parse();
}

RunConfig run_config_from_toml(const std::string& text, const std::string& origin) {
  const auto root = parse_toml(text, origin);
  static const char* kSections[] = {"run", "synthesis", "train", "smg", "segmenter", "data", "paths"};
  for (const auto& [name, body] : root.items()) {
    if (name.empty()) {
      if (!body.empty()) throw ConfigError(origin + ": keys must live inside a [section]");
      continue;
    }
    if (std::find(std::begin(kSections), std::end(kSections), name) == std::end(kSections))
      throw ConfigError(origin + ": unknown section [" + name + "]");
  }
  RunConfig c;
  if (root.contains("run")) {
    for (const auto& [key, value] : root.at("run").items()) {
      if (key != "seed") throw ConfigError("unknown key '" + key + "' in [run]");
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0)
        throw ConfigError("run.seed must be a non-negative integer");
      c.seed = value.get<std::uint64_t>();
    }
  }
  apply(root, "synthesis", c.synthesis);
  apply(root, "train", c.train);
  apply(root, "smg", c.smg);
  apply(root, "segmenter", c.segmenter);
  apply(root, "data", c.data);
  apply(root, "paths", c.paths);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_toml(ss.str(), path.string());
}

}  // namespace biocular
