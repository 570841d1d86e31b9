#include "fleetchurn/toml_lite.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fleetchurn/error.hpp"

namespace fleetchurn {

namespace {

using nlohmann::json;

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Removes a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (c == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

json parse_scalar(const std::string& tok) {
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    std::string out;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
      char c = tok[i];
      if (c == '\\' && i + 2 < tok.size()) {
        char n = tok[++i];
        switch (n) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: out += n;
        }
      } else {
        out += c;
      }
    }
    return json(out);
  }
  if (tok == "true") return json(true);
  if (tok == "false") return json(false);
  // integer, then float
  {
    std::int64_t v;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec == std::errc() && p == tok.data() + tok.size()) return json(v);
  }
  {
    double v;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec == std::errc() && p == tok.data() + tok.size()) return json(v);
  }
  throw make_error("ConfigParse", "cannot parse TOML value '" + tok + "'");
}

json parse_value(const std::string& raw) {
  std::string v = strip(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw make_error("ConfigParse", "unterminated array: " + v);
    json arr = json::array();
    std::string body = v.substr(1, v.size() - 2);
    std::string cur;
    bool in_str = false;
    int depth = 0;
    for (char c : body) {
      if (c == '"') in_str = !in_str;
      if (!in_str && c == '[') ++depth;
      if (!in_str && c == ']') --depth;
      if (c == ',' && !in_str && depth == 0) {
        if (!strip(cur).empty()) arr.push_back(parse_value(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!strip(cur).empty()) arr.push_back(parse_value(cur));
    return arr;
  }
  return parse_scalar(v);
}

json* descend(json& root, const std::string& dotted) {
  json* node = &root;
  std::size_t pos = 0;
  while (pos <= dotted.size()) {
    std::size_t dot = dotted.find('.', pos);
    std::string part = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    part = strip(part);
    if (part.empty()) throw make_error("ConfigParse", "empty key segment in '" + dotted + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return node;
}

}  // namespace

nlohmann::json toml_parse(const std::string& text) {
  json root = json::object();
  json* section = &root;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw make_error("ConfigParse", "bad section header at line " + std::to_string(lineno));
      section = descend(root, s.substr(1, s.size() - 2));
      if (!section->is_object() && !section->is_null()) throw make_error("ConfigParse", "section redefines key at line " + std::to_string(lineno));
      if (section->is_null()) *section = json::object();
      continue;
    }
    std::size_t eq = std::string::npos;
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_str = !in_str;
      if (s[i] == '=' && !in_str) {
        eq = i;
        break;
      }
    }
    if (eq == std::string::npos) throw make_error("ConfigParse", "expected key = value at line " + std::to_string(lineno));
    std::string key = strip(s.substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    (*section)[key] = parse_value(s.substr(eq + 1));
  }
  return root;
}

nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw make_error("IoError", "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") return nlohmann::json::parse(ss.str());
  return toml_parse(ss.str());
}

}  // namespace fleetchurn
