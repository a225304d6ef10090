#pragma once

/*
 * Token sequences and tabular language policies.
 *
 * A TabularPolicy is an order-k model: the next-token distribution depends on
 * the last k symbols of (prompt + partial response), left-padded with a
 * reserved start symbol. Logits are stored densely, one row of `vocab.size`
 * entries per context, so every reachable context has parameters.
 *
 * Response space: a response stops at the first eos token or after max_len
 * tokens, whichever comes first. The eos token counts toward the length, so
 * with max_len = 3 both [a, b, eos] and [a, b, c] are complete responses.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tso/error.hpp"
#include "tso/random.hpp"

namespace tso {

using Token = std::int32_t;

struct Vocabulary {
  int size = 2;
  Token eos_id = 0;

  void validate() const {
    if (size < 2) throw InputError("vocabulary size must be >= 2, got " + std::to_string(size));
    if (eos_id < 0 || eos_id >= size) throw InputError("eos id " + std::to_string(eos_id) + " outside vocabulary");
  }
  bool operator==(const Vocabulary&) const = default;
};

struct SeqSpec {
  int max_len = 1;

  void validate() const {
    if (max_len < 1) throw InputError("max_len must be >= 1, got " + std::to_string(max_len));
  }
  bool operator==(const SeqSpec&) const = default;
};

struct Prompt {
  std::vector<Token> tokens;
  auto operator<=>(const Prompt&) const = default;
};

struct Response {
  std::vector<Token> tokens;
  auto operator<=>(const Response&) const = default;
};

/// Guard on brute-force enumeration of the response space.
inline constexpr std::uint64_t kEnumerationGuard = 1'000'000;

inline void validate_prompt(const Prompt& x, const Vocabulary& vocab) {
  for (Token t : x.tokens)
    if (t < 0 || t >= vocab.size) throw InputError("prompt token " + std::to_string(t) + " outside vocabulary");
}

inline void validate_response(const Response& y, const Vocabulary& vocab, const SeqSpec& spec) {
  const auto n = y.tokens.size();
  if (n == 0) throw InputError("response is empty (an immediate stop is the single token [eos])");
  if (n > static_cast<std::size_t>(spec.max_len))
    throw InputError("response length " + std::to_string(n) + " exceeds max_len " + std::to_string(spec.max_len));
  for (std::size_t i = 0; i < n; ++i) {
    const Token t = y.tokens[i];
    if (t < 0 || t >= vocab.size) throw InputError("response token " + std::to_string(t) + " outside vocabulary");
    if (t == vocab.eos_id && i + 1 != n) throw InputError("token after eos in response");
  }
  if (y.tokens.back() != vocab.eos_id && n != static_cast<std::size_t>(spec.max_len))
    throw InputError("response without eos must have length exactly max_len");
}

/// Numerically stable log-softmax of one logit row.
inline void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

inline void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
}

class TabularPolicy {
 public:
  TabularPolicy() = default;

  /// All-zero (uniform) policy.
  TabularPolicy(Vocabulary vocab, int order) : vocab_(vocab), order_(order) {
    vocab_.validate();
    if (order < 0) throw InputError("policy order must be >= 0");
    std::uint64_t n = 1;
    for (int i = 0; i < order; ++i) {
      n *= static_cast<std::uint64_t>(vocab.size + 1);
      if (n > kEnumerationGuard) throw CapacityError("context table too large");
    }
    num_contexts_ = static_cast<std::size_t>(n);
    logits_.assign(num_contexts_ * static_cast<std::size_t>(vocab.size), 0.0);
  }

  TabularPolicy(Vocabulary vocab, int order, std::vector<double> logits) : TabularPolicy(vocab, order) {
    if (logits.size() != logits_.size())
      throw InputError("logit table has " + std::to_string(logits.size()) + " entries, expected " +
                       std::to_string(logits_.size()));
    for (double v : logits)
      if (!std::isfinite(v)) throw InputError("non-finite logit");
    logits_ = std::move(logits);
  }

  const Vocabulary& vocab() const noexcept { return vocab_; }
  int order() const noexcept { return order_; }
  std::size_t num_contexts() const noexcept { return num_contexts_; }
  /// Symbol used to left-pad short histories; one past the last token.
  Token start_symbol() const noexcept { return vocab_.size; }

  std::span<const double> row(std::size_t ctx) const {
    return {logits_.data() + ctx * static_cast<std::size_t>(vocab_.size), static_cast<std::size_t>(vocab_.size)};
  }
  std::span<double> row(std::size_t ctx) {
    return {logits_.data() + ctx * static_cast<std::size_t>(vocab_.size), static_cast<std::size_t>(vocab_.size)};
  }

  const std::vector<double>& logits() const noexcept { return logits_; }
  std::vector<double>& logits() noexcept { return logits_; }

  /// Context symbols (length = order) for a context index.
  std::vector<Token> context_symbols(std::size_t ctx) const {
    std::vector<Token> sym(static_cast<std::size_t>(order_));
    const auto base = static_cast<std::size_t>(vocab_.size + 1);
    for (int i = order_ - 1; i >= 0; --i) {
      sym[static_cast<std::size_t>(i)] = static_cast<Token>(ctx % base);
      ctx /= base;
    }
    return sym;
  }

  bool operator==(const TabularPolicy&) const = default;

 private:
  Vocabulary vocab_{};
  int order_ = 0;
  std::size_t num_contexts_ = 1;
  std::vector<double> logits_;
};

/// Same shape as the policy's logit table.
struct PolicyGradient {
  std::vector<double> values;

  PolicyGradient() = default;
  explicit PolicyGradient(const TabularPolicy& like) : values(like.logits().size(), 0.0) {}

  PolicyGradient& axpy(double a, const PolicyGradient& other) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += a * other.values[i];
    return *this;
  }
};

namespace detail {

/// Tracks the rolling order-k context while walking a sequence.
class ContextCursor {
 public:
  ContextCursor(const TabularPolicy& policy, std::size_t ctx)
      : base_(static_cast<std::size_t>(policy.vocab().size + 1)), order_(policy.order()), index_(ctx) {
    modulus_ = 1;
    for (int i = 0; i < order_; ++i) modulus_ *= base_;
  }

  ContextCursor(const TabularPolicy& policy, const Prompt& x)
      : base_(static_cast<std::size_t>(policy.vocab().size + 1)), order_(policy.order()) {
    modulus_ = 1;
    for (int i = 0; i < order_; ++i) modulus_ *= base_;
    const auto start = static_cast<std::size_t>(policy.start_symbol());
    index_ = 0;
    for (int i = 0; i < order_; ++i) index_ = index_ * base_ + start;
    for (Token t : x.tokens) push(t);
  }

  std::size_t index() const noexcept { return index_; }

  void push(Token t) {
    if (order_ == 0) return;
    index_ = (index_ * base_ + static_cast<std::size_t>(t)) % modulus_;
  }

 private:
  std::size_t base_;
  int order_;
  std::size_t modulus_ = 1;
  std::size_t index_ = 0;
};

}  // namespace detail

/// log pi(y | x), summed over every emitted token including a final eos.
inline double log_prob(const TabularPolicy& policy, const SeqSpec& spec, const Prompt& x, const Response& y) {
  validate_prompt(x, policy.vocab());
  validate_response(y, policy.vocab(), spec);
  detail::ContextCursor cur(policy, x);
  std::vector<double> lp(static_cast<std::size_t>(policy.vocab().size));
  double total = 0.0;
  for (Token t : y.tokens) {
    log_softmax(policy.row(cur.index()), lp);
    total += lp[static_cast<std::size_t>(t)];
    cur.push(t);
  }
  return total;
}

/// Context index the policy sees right after reading prompt x. Responses
/// to prompts with the same initial context are identically distributed.
inline std::size_t initial_context(const TabularPolicy& policy, const Prompt& x) {
  validate_prompt(x, policy.vocab());
  return detail::ContextCursor(policy, x).index();
}

/// log pi(y | initial context), for callers that group prompts by context.
inline double log_prob_from_context(const TabularPolicy& policy, std::size_t ctx, const Response& y) {
  detail::ContextCursor cur(policy, ctx);
  std::vector<double> lp(static_cast<std::size_t>(policy.vocab().size));
  double total = 0.0;
  for (Token t : y.tokens) {
    log_softmax(policy.row(cur.index()), lp);
    total += lp[static_cast<std::size_t>(t)];
    cur.push(t);
  }
  return total;
}

/// Adds scale * d log pi(y|x) / d logits into `grad`.
inline void accumulate_log_prob_grad(const TabularPolicy& policy, const SeqSpec& spec, const Prompt& x,
                                     const Response& y, double scale, PolicyGradient& grad) {
  validate_prompt(x, policy.vocab());
  validate_response(y, policy.vocab(), spec);
  const auto V = static_cast<std::size_t>(policy.vocab().size);
  detail::ContextCursor cur(policy, x);
  std::vector<double> p(V);
  for (Token t : y.tokens) {
    const std::size_t ctx = cur.index();
    softmax(policy.row(ctx), p);
    double* g = grad.values.data() + ctx * V;
    for (std::size_t v = 0; v < V; ++v) g[v] -= scale * p[v];
    g[static_cast<std::size_t>(t)] += scale;
    cur.push(t);
  }
}

inline PolicyGradient log_prob_grad(const TabularPolicy& policy, const SeqSpec& spec, const Prompt& x,
                                    const Response& y) {
  PolicyGradient g(policy);
  accumulate_log_prob_grad(policy, spec, x, y, 1.0, g);
  return g;
}

inline Response sample_response(const TabularPolicy& policy, const SeqSpec& spec, const Prompt& x, Rng& rng) {
  validate_prompt(x, policy.vocab());
  spec.validate();
  const auto V = static_cast<std::size_t>(policy.vocab().size);
  detail::ContextCursor cur(policy, x);
  std::vector<double> p(V);
  Response y;
  while (static_cast<int>(y.tokens.size()) < spec.max_len) {
    softmax(policy.row(cur.index()), p);
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = V;
    for (std::size_t v = 0; v < V; ++v) {
      acc += p[v];
      if (u < acc) {
        pick = v;
        break;
      }
    }
    if (pick == V) {
      // u landed in the rounding slack above the cumulative sum.
      pick = V - 1;
      while (pick > 0 && p[pick] == 0.0) --pick;
    }
    const auto t = static_cast<Token>(pick);
    y.tokens.push_back(t);
    if (t == policy.vocab().eos_id) break;
    cur.push(t);
  }
  return y;
}

/// Number of valid responses: sum_{j<L} (V-1)^j + (V-1)^L.
inline std::uint64_t response_space_size(const SeqSpec& spec, const Vocabulary& vocab) {
  const auto c = static_cast<std::uint64_t>(vocab.size - 1);
  std::uint64_t total = 0, pw = 1;
  for (int j = 0; j <= spec.max_len; ++j) {
    total += pw;
    if (total > kEnumerationGuard) return kEnumerationGuard + 1;
    if (j < spec.max_len) pw *= c;
  }
  return total;
}

/// Every valid response exactly once, in lexicographic token order.
inline std::vector<Response> enumerate_responses(const SeqSpec& spec, const Vocabulary& vocab) {
  spec.validate();
  vocab.validate();
  if (response_space_size(spec, vocab) > kEnumerationGuard)
    throw CapacityError("response space exceeds the enumeration guard of " + std::to_string(kEnumerationGuard));
  std::vector<Response> out;
  std::vector<Token> cur;
  // Depth-first over tokens in increasing order yields lexicographic order.
  auto rec = [&](auto&& self) -> void {
    for (Token t = 0; t < vocab.size; ++t) {
      cur.push_back(t);
      if (t == vocab.eos_id || static_cast<int>(cur.size()) == spec.max_len)
        out.push_back(Response{cur});
      else
        self(self);
      cur.pop_back();
    }
  };
  rec(rec);
  return out;
}

}  // namespace tso
