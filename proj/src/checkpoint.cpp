#include "sdft/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "sdft/errors.hpp"

namespace sdft {

namespace {

constexpr const char* kMagic = "sdft-policy 1";

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, int> parse_kv(const std::string& line, std::size_t line_no) {
  std::map<std::string, int> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key=value, got '" + tok + "'");
    out[tok.substr(0, eq)] = std::stoi(tok.substr(eq + 1));
  }
  return out;
}

int require(const std::map<std::string, int>& kv, const std::string& key, std::size_t line_no) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(line_no, "missing shape key '" + key + "'");
  return it->second;
}

}  // namespace

std::string policy_to_text(const PolicyParams& params) {
  std::ostringstream os;
  os << kMagic << '\n';
  os << "family " << to_string(params.family()) << '\n';
  const Vocab& v = params.vocab;
  os << "vocab size=" << v.size << " bos=" << v.bos << " eos=" << v.eos << " pad=" << v.pad << " sep=" << v.sep
     << '\n';
  if (const auto* tab = std::get_if<TabularShape>(&params.shape)) {
    os << "shape window=" << tab->window << '\n';
  } else {
    const auto& s = std::get<TransformerShape>(params.shape);
    os << "shape dim=" << s.dim << " layers=" << s.layers << " heads=" << s.heads << " context=" << s.context
       << " mlp_ratio=" << s.mlp_ratio << " smeared_keys=" << (s.smeared_keys ? 1 : 0) << '\n';
  }
  os << "theta " << params.theta.size() << '\n';
  for (double x : params.theta) os << format_double(x) << '\n';
  return os.str();
}

PolicyParams policy_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return line;
  };
  if (next() != kMagic) throw ParseError(line_no, "not a policy checkpoint");

  std::string family = next();
  if (family.rfind("family ", 0) != 0) throw ParseError(line_no, "expected 'family'");
  family = family.substr(7);

  std::string vline = next();
  if (vline.rfind("vocab ", 0) != 0) throw ParseError(line_no, "expected 'vocab'");
  const auto vkv = parse_kv(vline.substr(6), line_no);
  Vocab vocab{require(vkv, "size", line_no), require(vkv, "bos", line_no), require(vkv, "eos", line_no),
              require(vkv, "pad", line_no), require(vkv, "sep", line_no)};

  std::string sline = next();
  if (sline.rfind("shape ", 0) != 0) throw ParseError(line_no, "expected 'shape'");
  const auto skv = parse_kv(sline.substr(6), line_no);
  Shape shape;
  if (family == "tabular") {
    shape = TabularShape{require(skv, "window", line_no)};
  } else if (family == "transformer") {
    shape = TransformerShape{require(skv, "dim", line_no), require(skv, "layers", line_no),
                             require(skv, "heads", line_no), require(skv, "context", line_no),
                             require(skv, "mlp_ratio", line_no), require(skv, "smeared_keys", line_no) != 0};
  } else {
    throw ParseError(2, "unknown family '" + family + "'");
  }

  std::string tline = next();
  if (tline.rfind("theta ", 0) != 0) throw ParseError(line_no, "expected 'theta'");
  const std::size_t n = std::stoul(tline.substr(6));
  PolicyParams p{vocab, shape, {}};
  p.theta.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& s = next();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw ParseError(line_no, "bad number '" + s + "'");
    p.theta.push_back(v);
  }
  validate(p);
  return p;
}

void save_policy(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << policy_to_text(params);
}

PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return policy_from_text(ss.str());
}

}  // namespace sdft
