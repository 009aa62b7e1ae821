#include "cmlm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "cmlm/error.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> checked_logits(const LanguageModel& model, std::span<const TokenId> context) {
  if (context.empty()) throw Error("decoding", "context must not be empty");
  if (context.size() > model.max_positions()) {
    throw Error("decoding", "context length " + std::to_string(context.size()) + " exceeds model limit " +
                                std::to_string(model.max_positions()));
  }
  std::vector<double> logits = model.next_token_logits(context);
  if (logits.size() != static_cast<std::size_t>(model.vocab_size())) {
    throw Error("decoding", "model returned the wrong number of logits");
  }
  return logits;
}

// Lowest id among the maxima.
TokenId argmax(std::span<const double> values) {
  TokenId best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<TokenId>(i);
  }
  return best;
}

// Picks the next token, excluding ids with banned[id] set (if provided).
TokenId pick(std::vector<double> logits, const DecodeSettings& settings, Rng& rng,
             const std::vector<bool>* banned) {
  if (banned) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if ((*banned)[i]) logits[i] = kNegInf;
    }
  }
  if (settings.greedy) return argmax(logits);
  const double max = *std::max_element(logits.begin(), logits.end());
  if (max == kNegInf) throw Error("decoding", "no token is allowed");
  std::vector<double> weights(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    weights[i] = logits[i] == kNegInf ? 0.0 : std::exp((logits[i] - max) / settings.temperature);
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double acc = 0;
  TokenId last_allowed = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] == 0.0) continue;
    acc += weights[i];
    last_allowed = static_cast<TokenId>(i);
    if (u < acc) return last_allowed;
  }
  return last_allowed;
}

double logsumexp(std::span<const double> values) {
  double max = kNegInf;
  for (double v : values) max = std::max(max, v);
  if (max == kNegInf) return kNegInf;
  double sum = 0;
  for (double v : values) sum += std::exp(v - max);
  return max + std::log(sum);
}

struct Hypothesis {
  std::vector<TokenId> tokens;
  double logprob = 0;
  double score() const { return logprob / static_cast<double>(tokens.size()); }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  const double sa = a.score();
  const double sb = b.score();
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<std::vector<double>> LanguageModel::prefix_logits(std::span<const TokenId> tokens) const {
  std::vector<std::vector<double>> rows;
  rows.reserve(tokens.size());
  for (std::size_t i = 1; i <= tokens.size(); ++i) rows.push_back(next_token_logits(tokens.first(i)));
  return rows;
}

template <typename T>
std::vector<double> TransformerLM<T>::next_token_logits(std::span<const TokenId> context) const {
  const auto logits = model_.forward(context);
  const auto last = logits.row(logits.rows() - 1);
  std::vector<double> out(static_cast<std::size_t>(last.size()));
  for (Eigen::Index j = 0; j < last.size(); ++j) out[j] = static_cast<double>(last(j));
  return out;
}

template <typename T>
std::vector<std::vector<double>> TransformerLM<T>::prefix_logits(std::span<const TokenId> tokens) const {
  const auto logits = model_.forward(tokens);
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    rows[i].resize(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) rows[i][j] = static_cast<double>(logits(i, j));
  }
  return rows;
}

template class TransformerLM<float>;
template class TransformerLM<double>;

DecodeSettings DecodeSettings::defaults(const Vocab& vocab) {
  DecodeSettings s;
  s.stop_tokens = {vocab.eod()};
  return s;
}

void DecodeSettings::validate(const LanguageModel& model) const {
  if (!greedy && !(temperature > 0)) throw Error("decoding", "temperature must be positive");
  if (beam_size < 1) throw Error("decoding", "beam_size must be at least 1");
  if (max_len > model.max_positions()) {
    throw Error("decoding", "max_len " + std::to_string(max_len) + " exceeds model max_positions " +
                                std::to_string(model.max_positions()));
  }
}

bool DecodeSettings::is_stop(TokenId t) const {
  return std::find(stop_tokens.begin(), stop_tokens.end(), t) != stop_tokens.end();
}

std::vector<TokenId> sample(const LanguageModel& model, std::span<const TokenId> prompt,
                            const DecodeSettings& settings) {
  settings.validate(model);
  if (prompt.size() > settings.max_len) throw Error("decoding", "prompt longer than max_len");
  Rng rng(settings.seed);
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  while (seq.size() < settings.max_len) {
    const TokenId next = pick(checked_logits(model, seq), settings, rng, nullptr);
    seq.push_back(next);
    if (settings.is_stop(next)) break;
  }
  return {seq.begin() + static_cast<std::ptrdiff_t>(prompt.size()), seq.end()};
}

BeamResult beam(const LanguageModel& model, std::span<const TokenId> prompt,
                const DecodeSettings& settings) {
  settings.validate(model);
  if (prompt.size() >= settings.max_len) throw Error("decoding", "prompt leaves no room to generate");
  const std::size_t budget = settings.max_len - prompt.size();
  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  while (!live.empty()) {
    std::vector<Hypothesis> candidates;
    for (const auto& hyp : live) {
      context.resize(prompt.size());
      context.insert(context.end(), hyp.tokens.begin(), hyp.tokens.end());
      const std::vector<double> lp = log_softmax(checked_logits(model, context));
      for (std::size_t t = 0; t < lp.size(); ++t) {
        if (lp[t] == kNegInf) continue;
        Hypothesis next{hyp.tokens, hyp.logprob + lp[t]};
        next.tokens.push_back(static_cast<TokenId>(t));
        candidates.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(settings.beam_size));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis& h = candidates[i];
      if (settings.is_stop(h.tokens.back()) || h.tokens.size() >= budget) {
        finished.push_back(std::move(h));
      } else {
        live.push_back(std::move(h));
      }
    }
  }
  if (finished.empty()) throw Error("decoding", "beam search produced no hypothesis");
  const auto best = std::min_element(finished.begin(), finished.end(), better);
  return {best->tokens, best->logprob, best->score()};
}

CandidateTrie::CandidateTrie() : nodes_(1) {}

bool CandidateTrie::insert(std::span<const TokenId> candidate) {
  std::size_t at = root();
  for (TokenId t : candidate) {
    const auto it = nodes_[at].children.find(t);
    if (it != nodes_[at].children.end()) {
      at = it->second;
      continue;
    }
    nodes_.emplace_back();
    nodes_[at].children.emplace(t, nodes_.size() - 1);
    at = nodes_.size() - 1;
  }
  if (nodes_[at].terminal) return false;
  nodes_[at].terminal = true;
  ++count_;
  return true;
}

bool CandidateTrie::contains(std::span<const TokenId> candidate) const {
  std::size_t at = root();
  for (TokenId t : candidate) {
    const auto it = nodes_[at].children.find(t);
    if (it == nodes_[at].children.end()) return false;
    at = it->second;
  }
  return nodes_[at].terminal;
}

std::vector<std::vector<TokenId>> CandidateTrie::candidates() const {
  std::vector<std::vector<TokenId>> out;
  std::vector<TokenId> path;
  auto walk = [&](auto& self, std::size_t at) -> void {
    if (nodes_[at].terminal) out.push_back(path);
    for (const auto& [token, child] : nodes_[at].children) {
      path.push_back(token);
      self(self, child);
      path.pop_back();
    }
  };
  walk(walk, root());
  return out;
}

ConstrainedResult constrained(const LanguageModel& model, std::span<const TokenId> prompt,
                              const CandidateTrie& trie, const DecodeSettings& settings,
                              ConstrainedSearch search) {
  if (trie.empty()) throw Error("decoding", "candidate trie is empty");
  if (settings.stop_tokens.empty()) throw Error("decoding", "constrained decoding needs a stop token");
  if (prompt.empty()) throw Error("decoding", "prompt must not be empty");
  const TokenId stop = settings.stop_tokens.front();

  struct State {
    double cost = 0;  // negative renormalized log-probability so far
    std::vector<TokenId> tokens;
    std::size_t node = 0;
    bool done = false;
  };
  // Legal continuations of `state` with their renormalized log-probabilities.
  auto expand = [&](const State& state) {
    const auto& node = trie.node(state.node);
    std::vector<std::pair<TokenId, double>> legal;
    for (const auto& [token, child] : node.children) legal.emplace_back(token, 0.0);
    if (node.terminal) legal.emplace_back(stop, 0.0);
    if (legal.size() == 1) return legal;  // forced: probability 1 after masking
    std::vector<TokenId> context(prompt.begin(), prompt.end());
    context.insert(context.end(), state.tokens.begin(), state.tokens.end());
    const std::vector<double> logits = checked_logits(model, context);
    std::vector<double> masked;
    for (const auto& [token, lp] : legal) {
      if (token < 0 || token >= model.vocab_size()) throw Error("decoding", "candidate token out of range");
      masked.push_back(logits[token]);
    }
    const double norm = logsumexp(masked);
    for (std::size_t i = 0; i < legal.size(); ++i) legal[i].second = masked[i] - norm;
    return legal;
  };
  auto advance = [&](const State& state, TokenId token, double lp) {
    State next{state.cost - lp, state.tokens, state.node, false};
    if (token == stop && trie.node(state.node).terminal &&
        !trie.node(state.node).children.contains(stop)) {
      next.done = true;
    } else {
      next.tokens.push_back(token);
      next.node = trie.node(state.node).children.at(token);
    }
    return next;
  };

  if (search == ConstrainedSearch::greedy) {
    State state;
    while (!state.done) {
      const auto legal = expand(state);
      std::size_t best = 0;
      for (std::size_t i = 1; i < legal.size(); ++i) {
        if (legal[i].second > legal[best].second ||
            (legal[i].second == legal[best].second && legal[i].first < legal[best].first)) {
          best = i;
        }
      }
      state = advance(state, legal[best].first, legal[best].second);
    }
    return {state.tokens, -state.cost};
  }

  // Costs only grow along a path, so the first completed state popped is the
  // most probable candidate.
  auto worse = [](const State& a, const State& b) {
    if (a.cost != b.cost) return a.cost > b.cost;
    if (a.tokens != b.tokens) return a.tokens > b.tokens;
    return !a.done && b.done;
  };
  std::priority_queue<State, std::vector<State>, decltype(worse)> frontier(worse);
  frontier.push(State{});
  while (!frontier.empty()) {
    State state = frontier.top();
    frontier.pop();
    if (state.done) return {state.tokens, -state.cost};
    for (const auto& [token, lp] : expand(state)) frontier.push(advance(state, token, lp));
  }
  throw Error("decoding", "constrained search exhausted the trie without a candidate");
}

SizeHintResult size_hint_decode(const LanguageModel& model, const Vocab& vocab,
                                std::span<const TokenId> prompt, std::size_t size_hint,
                                const DecodeSettings& settings) {
  settings.validate(model);
  if (size_hint < 1 || size_hint >= settings.max_len) {
    throw Error("decoding", "size_hint must lie in [1, max_len)");
  }
  const TokenId mask0 = vocab.sentinel(0);
  if (std::find(prompt.begin(), prompt.end(), mask0) == prompt.end()) {
    throw Error("decoding", "prompt has no body <mask:0>");
  }
  const std::size_t forced_at = settings.max_len - size_hint;
  if (prompt.size() > forced_at) {
    throw Error("decoding", "prompt length " + std::to_string(prompt.size()) +
                                " exceeds max_len - size_hint = " + std::to_string(forced_at));
  }
  if (model.vocab_size() != vocab.size()) throw Error("decoding", "model and vocab sizes differ");

  std::vector<bool> banned(static_cast<std::size_t>(vocab.size()), false);
  for (int k = 0; k < Vocab::kNumSentinels; ++k) banned[vocab.sentinel(k)] = true;
  std::vector<bool> banned_before = banned;
  for (TokenId t : settings.stop_tokens) banned_before[t] = true;

  Rng rng(settings.seed);
  SizeHintResult result;
  result.tokens.assign(prompt.begin(), prompt.end());
  while (result.tokens.size() < forced_at) {
    result.tokens.push_back(pick(checked_logits(model, result.tokens), settings, rng, &banned_before));
  }
  result.sentinel_position = result.tokens.size();
  result.tokens.push_back(mask0);
  while (result.tokens.size() < settings.max_len) {
    const TokenId next = pick(checked_logits(model, result.tokens), settings, rng, &banned);
    result.tokens.push_back(next);
    if (settings.is_stop(next)) break;
    result.infill.push_back(next);
  }
  return result;
}

ScoreResult score(const LanguageModel& model, std::span<const TokenId> tokens,
                  std::optional<std::span<const std::uint8_t>> weights) {
  if (tokens.size() < 2) throw Error("decoding", "scoring needs at least two tokens");
  if (weights && weights->size() != tokens.size()) throw Error("decoding", "weights/tokens length mismatch");
  if (tokens.size() > model.max_positions()) throw Error("decoding", "sequence exceeds model limit");
  const auto rows = model.prefix_logits(tokens);
  ScoreResult result;
  result.per_token.resize(tokens.size() - 1, 0.0);
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (weights && (*weights)[i] == 0) continue;
    const auto& row = rows[i - 1];
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= row.size()) throw Error("decoding", "token out of range");
    result.per_token[i - 1] = row[t] - logsumexp(row);
    result.total += result.per_token[i - 1];
  }
  return result;
}

std::vector<RankedCandidate> rank_candidates(const LanguageModel& model,
                                             std::span<const TokenId> context,
                                             std::span<const std::vector<TokenId>> candidates,
                                             TokenId stop) {
  std::vector<RankedCandidate> ranked;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<TokenId> target(context.begin(), context.end());
    target.insert(target.end(), candidates[c].begin(), candidates[c].end());
    target.push_back(stop);
    std::vector<std::uint8_t> weights(target.size(), 0);
    std::fill(weights.begin() + static_cast<std::ptrdiff_t>(context.size()), weights.end(), 1);
    ranked.push_back({c, score(model, target, weights).total, 0});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = i + 1;
  return ranked;
}

double LogProbReranker::score(std::span<const TokenId> prompt, std::span<const TokenId> continuation) const {
  if (continuation.empty()) return 0.0;
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  std::vector<std::uint8_t> weights(seq.size(), 0);
  std::fill(weights.begin() + static_cast<std::ptrdiff_t>(prompt.size()), weights.end(), 1);
  return cmlm::score(model_, seq, weights).total;
}

std::vector<RankedSample> sample_and_rerank(const LanguageModel& model,
                                            std::span<const std::vector<TokenId>> prompts,
                                            std::size_t samples_per_prompt,
                                            const DecodeSettings& settings, const Reranker& reranker) {
  std::vector<RankedSample> out;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t i = 0; i < samples_per_prompt; ++i) {
      DecodeSettings s = settings;
      s.seed = settings.seed + i;
      RankedSample r{p, sample(model, prompts[p], s), 0.0};
      r.score = reranker.score(prompts[p], r.continuation);
      out.push_back(std::move(r));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

PromptSelection select_by_perplexity(const LanguageModel& model,
                                     std::span<const std::vector<TokenId>> prompts,
                                     const DecodeSettings& settings) {
  if (prompts.empty()) throw Error("decoding", "no prompts to select from");
  PromptSelection best;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    BeamResult r = beam(model, prompts[p], settings);
    // Higher mean log-probability is lower perplexity.
    if (p == 0 || r.score > best.result.score) best = {p, std::move(r)};
  }
  return best;
}

}  // namespace cmlm
