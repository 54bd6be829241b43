// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "tabformer/cli.hpp"
#include "tabformer/eval.hpp"
#include "tabformer/hash.hpp"
#include "tabformer/heads.hpp"
#include "tabformer/synthgen.hpp"
#include "tabformer/tabbert.hpp"
#include "tabformer/tabgpt.hpp"

using namespace tabformer;
using tabformer::testing::grad_check;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

void note(const std::string& line) {
  std::printf("    %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note("failed: " + what);
    }
  }
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;  // 0 means no runtime bound
  std::function<Outcome()> run;
};

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale_by = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal() * scale_by;
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

Tensor<double> weighted_sum(const Tensor<double>& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(t.numel());
  for (double& x : w) x = rng.normal();
  return sum(mul(t, Tensor<double>(t.shape(), std::move(w))));
}

std::vector<std::int32_t> random_grid(const std::vector<std::int32_t>& sizes, std::size_t cells_rows, Rng& rng) {
  std::vector<std::int32_t> grid;
  for (std::size_t i = 0; i < cells_rows; ++i) {
    std::int32_t offset = kNumSpecialTokens;
    for (std::int32_t s : sizes) {
      grid.push_back(offset + static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(s))));
      offset += s;
    }
  }
  return grid;
}

std::vector<std::int32_t> offsets_of(const std::vector<std::int32_t>& sizes) {
  std::vector<std::int32_t> out;
  std::int32_t offset = kNumSpecialTokens;
  for (std::int32_t s : sizes) out.push_back(offset), offset += s;
  return out;
}

std::int32_t total_of(const std::vector<std::int32_t>& sizes) {
  std::int32_t t = kNumSpecialTokens;
  for (auto s : sizes) t += s;
  return t;
}

std::size_t param_count(const auto& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

void jitter(NamedParams<double>& params, Rng& rng) {
  for (auto& [name, t] : params) {
    for (double& x : t.data_mut()) x += rng.normal(0.0, 0.1);
  }
}

struct Corpus {
  TableSchema schema;
  Vocabulary vocab;
  std::vector<EntityRows> entities;
};

Corpus transactions(const TransactionConfig& tc, std::uint64_t seed) {
  auto c = gen_transactions(tc, seed);
  auto schema = infer_schema(c.table.header, transaction_hints());
  Corpus out{schema, build_vocabulary(c.table, schema), {}};
  out.entities = encode_table(c.table, out.vocab);
  return out;
}

std::vector<std::vector<std::int32_t>> first_rows(const std::vector<WindowSample>& windows) {
  std::vector<std::vector<std::int32_t>> out;
  for (const auto& w : windows) out.emplace_back(w.tokens.begin(), w.tokens.begin() + std::ptrdiff_t(w.fields));
  return out;
}

// Each cell must hold an id from its own field's range.
bool cells_in_field_ranges(const WindowSample& w, const Vocabulary& vocab) {
  if (w.fields != vocab.field_count() || w.tokens.size() != w.rows * w.fields) return false;
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t f = 0; f < w.fields; ++f) {
      const auto& fv = vocab.field(f);
      const std::int32_t id = w.at(r, f);
      if (id < fv.offset || id >= fv.offset + fv.size()) return false;
    }
  }
  return true;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  Outcome o;
  Rng rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  auto check = [&](const std::string& what, const std::function<Tensor<double>()>& loss,
                   std::vector<Tensor<double>> inputs) {
    auto r = grad_check(loss, std::move(inputs), 1e-5);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    o.require(r.max_rel_error < 1e-4, what + " rel error " + fmt("%.3g", r.max_rel_error) + " at " + r.worst);
  };

  {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    auto c = random_tensor({2, 3, 4}, rng), d = random_tensor({2, 4, 5}, rng), w = random_tensor({3, 4}, rng);
    check("matmul", [&] {
      return add(add(weighted_sum(matmul(a, b)), weighted_sum(matmul(c, b), 2)),
                 add(weighted_sum(matmul(c, d), 3), weighted_sum(matmul(w, d), 4)));
    }, {a, b, c, d, w});
  }
  {
    auto a = random_tensor({2, 3}, rng), b = random_tensor({3}, rng);
    check("elementwise", [&] {
      return add(weighted_sum(mul(add(a, b), sub(b, a))), weighted_sum(add_scalar(scale(a, 2.5), 1.0), 5));
    }, {a, b});
  }
  {
    auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 1, 4}, rng);
    std::vector<std::size_t> rows = {1, 0, 1, 3};
    check("shape ops", [&] {
      auto c = concat<double>({a, b}, 1);
      auto p = permute(c, {2, 0, 1});
      auto s = slice(transpose(p), 1, 1, 3);
      return weighted_sum(index_select(reshape(s, {4, 4}), rows));
    }, {a, b});
  }
  {
    auto a = random_tensor({2, 3, 4}, rng);
    std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 1, 1, 0, 0, 0, 0, 0, 1};
    check("softmax", [&] {
      return add(add(weighted_sum(softmax(a, 0)), weighted_sum(softmax(a, 1), 3)),
                 add(weighted_sum(softmax(a, -1), 4), weighted_sum(masked_softmax(a, allowed), 5)));
    }, {a});
  }
  {
    auto x = random_tensor({3, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
    check("layer_norm", [&] { return weighted_sum(layer_norm(x, g, b)); }, {x, g, b});
  }
  {
    auto x = random_tensor({4, 5}, rng);
    check("activations", [&] {
      return add(add(weighted_sum(gelu(x)), weighted_sum(tanh(x), 2)),
                 add(weighted_sum(sigmoid(x), 3), weighted_sum(relu(add_scalar(x, 0.05)), 4)));
    }, {x});
  }
  {
    auto x = random_tensor({4, 6}, rng);
    check("dropout", [&] {
      Rng mask_rng(5);  // same mask on every evaluation
      return weighted_sum(dropout(x, 0.3, mask_rng));
    }, {x});
  }
  {
    auto table = random_tensor({6, 3}, rng);
    std::vector<std::int32_t> ids = {0, 5, 2, 5};
    std::vector<std::int32_t> targets = {1, -100, 2, 0};
    std::vector<double> bin = {1, 0, 1, 1};
    std::vector<double> reg = {0.5, -1, 2, 0.25};
    check("embedding, reductions, losses", [&] {
      auto e = embedding_lookup(table, ids, {2, 2});
      auto flat = reshape(e, {4, 3});
      auto ce = cross_entropy(flat, targets);
      auto bce = bce_with_logits(slice(flat, 1, 0, 1), std::span<const double>(bin));
      auto mse = mse_loss(slice(flat, 1, 1, 2), std::span<const double>(reg));
      return add(add(ce, weighted_sum(mean_axis(e, 1))), add(add(bce, mse), mean(e)));
    }, {table});
  }
  for (bool causal : {false, true}) {
    Rng init = rng.split(causal ? 1 : 0);
    TransformerEncoder<double> enc(TransformerConfig{2, 2, 4, 6, 5, causal}, init);
    NamedParams<double> named;
    enc.collect("enc", named);
    jitter(named, rng);
    auto x = random_tensor({2, 4, 4}, rng);
    auto inputs = param_tensors(named);
    inputs.push_back(x);
    check(causal ? "causal encoder" : "encoder", [&] { return weighted_sum(enc.forward(x)); }, inputs);
  }
  {
    Lstm<double> lstm({3, 4}, rng);
    Mlp<double> mlp({4, 5, 2}, rng);
    NamedParams<double> named;
    lstm.collect("lstm", named);
    mlp.collect("mlp", named);
    auto x = random_tensor({2, 3, 3}, rng);
    auto inputs = param_tensors(named);
    inputs.push_back(x);
    check("lstm + mlp", [&] {
      auto out = lstm.forward(x);
      return add(weighted_sum(mlp.forward(out.final_hidden)), weighted_sum(out.hidden_states[1], 7));
    }, inputs);
  }
  {
    std::vector<std::int32_t> sizes = {3, 4, 2};
    TabBertConfig cfg;
    cfg.field = {1, 2, 4, 6, 3, false};
    cfg.sequence = {1, 2, 4, 6, 3, false};
    Rng init(9);
    TabBertModel<double> model(sizes, total_of(sizes), cfg, init);
    auto params = model.parameters();
    const std::size_t n = param_count(params);
    o.require(n <= 1000, "TabBERT graph has " + std::to_string(n) + " parameters");
    jitter(params, rng);
    auto grid = random_grid(sizes, 6, rng);
    std::vector<MaskPlan> plans;
    for (std::size_t b = 0; b < 2; ++b) {
      WindowSample w;
      w.rows = 3, w.fields = 3;
      w.tokens.assign(grid.begin() + std::ptrdiff_t(b * 9), grid.begin() + std::ptrdiff_t((b + 1) * 9));
      auto [masked, plan] = mask_fields(w, 0.4, 10 + b);
      std::copy(masked.tokens.begin(), masked.tokens.end(), grid.begin() + std::ptrdiff_t(b * 9));
      plans.push_back(plan);
    }
    check("TabBERT (" + std::to_string(n) + " params)", [&] {
      return mlm_loss(model.mlm_logits(model.encode(grid, 2, 3).sequence, plans, offsets_of(sizes)));
    }, param_tensors(params));
  }
  {
    const std::int32_t vocab = 12;
    Rng init(10);
    TabGptModel<double> model(vocab, {1, 2, 8, 12, 10, true}, init);
    auto params = model.parameters();
    const std::size_t n = param_count(params);
    o.require(n <= 1000, "TabGPT graph has " + std::to_string(n) + " parameters");
    jitter(params, rng);
    std::vector<std::int32_t> tokens(2 * 8);
    for (auto& t : tokens) t = std::int32_t(rng.index(std::size_t(vocab)));
    check("TabGPT (" + std::to_string(n) + " params)", [&] { return causal_lm_loss(model, tokens, 2, 8); },
          param_tensors(params));
  }
  o.detail = std::to_string(checked) + " partials, max relative error " + fmt("%.2e", worst);
  return o;
}

Outcome hierarchy_locality() {
  Outcome o;
  Rng rng(202);
  std::size_t bert_ok = 0, gpt_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_fields = 2 + rng.index(5), rows = 2 + rng.index(9), batch = 1 + rng.index(3);
    std::vector<std::int32_t> sizes;
    for (std::size_t f = 0; f < n_fields; ++f) sizes.push_back(2 + std::int32_t(rng.index(8)));
    TabBertConfig cfg;
    const std::size_t dim = 4 * (1 + rng.index(3));
    cfg.field = {1 + rng.index(2), 2, dim, 2 * dim, n_fields, false};
    cfg.sequence = {1 + rng.index(2), 2, dim, 2 * dim, rows, false};
    Rng init = rng.split(std::uint64_t(trial));
    TabBertModel<float> model(sizes, total_of(sizes), cfg, init);
    auto grid = random_grid(sizes, batch * rows, rng);
    const std::size_t b = rng.index(batch), r = rng.index(rows), f = rng.index(n_fields);
    auto other = grid;
    const std::size_t cell = (b * rows + r) * n_fields + f;
    const std::int32_t offset = offsets_of(sizes)[f];
    other[cell] = offset + (other[cell] - offset + 1 + std::int32_t(rng.index(std::size_t(sizes[f] - 1)))) % sizes[f];
    auto base = model.encode(grid, batch, rows);
    auto changed = model.encode(other, batch, rows);
    bool ok = true;
    for (std::size_t bb = 0; bb < batch; ++bb) {
      for (std::size_t rr = 0; rr < rows; ++rr) {
        bool e_same = true, se_same = true;
        for (std::size_t d = 0; d < dim; ++d) {
          e_same = e_same && base.row_embeddings.at({bb, rr, d}) == changed.row_embeddings.at({bb, rr, d});
          se_same = se_same && base.sequence.at({bb, rr, d}) == changed.sequence.at({bb, rr, d});
        }
        if (bb != b) {
          ok = ok && e_same && se_same;
        } else {
          ok = ok && e_same == (rr != r) && !se_same;
        }
      }
    }
    bert_ok += ok;

    const std::int32_t vocab = 8 + std::int32_t(rng.index(40));
    const std::size_t len = 3 + rng.index(20), gb = 1 + rng.index(3);
    const std::size_t gdim = 4 * (1 + rng.index(3));
    TabGptModel<float> gpt(vocab, {1 + rng.index(3), 2, gdim, 2 * gdim, len, true}, init);
    std::vector<std::int32_t> tokens(gb * len);
    for (auto& t : tokens) t = std::int32_t(rng.index(std::size_t(vocab)));
    const std::size_t pb = rng.index(gb), pos = rng.index(len);
    auto perturbed = tokens;
    perturbed[pb * len + pos] = (perturbed[pb * len + pos] + 1 + std::int32_t(rng.index(std::size_t(vocab - 1)))) % vocab;
    auto la = gpt.logits(tokens, gb, len), lb = gpt.logits(perturbed, gb, len);
    bool gok = true, differs = false;
    for (std::size_t p = 0; p <= pos; ++p) {
      for (std::size_t v = 0; v < std::size_t(vocab); ++v) {
        const bool same = la.at({pb, p, v}) == lb.at({pb, p, v});
        if (p < pos) gok = gok && same;
        else differs = differs || !same;
      }
    }
    gpt_ok += gok && differs;
  }
  o.require(bert_ok == 100, "TabBERT locality held in " + std::to_string(bert_ok) + "/100 trials");
  o.require(gpt_ok == 100, "TabGPT causality held in " + std::to_string(gpt_ok) + "/100 trials");
  o.detail = "TabBERT " + std::to_string(bert_ok) + "/100, TabGPT " + std::to_string(gpt_ok) + "/100 (float32)";
  return o;
}

Outcome mlm_overfit() {
  Outcome o;
  TransactionConfig tc;
  tc.n_users = 5;
  tc.rows_per_user = 205;
  auto c = transactions(tc, 1);
  auto windows = build_windows(c.entities, c.schema, 10, 5);
  o.require(windows.size() == 200, "corpus has " + std::to_string(windows.size()) + " windows");
  PretrainConfig pc;
  pc.steps = 2000;
  auto result = pretrain(windows, c.vocab, pc, 3, [](const PretrainLogEntry& e) {
    if (e.step % 500 == 0) note("step " + std::to_string(e.step) + " loss " + fmt("%.4f", e.loss));
  });
  // Score every window under fresh masks.
  NoGradGuard no_grad;
  const auto offsets = [&] {
    std::vector<std::int32_t> out;
    for (const auto& f : c.vocab.fields()) out.push_back(f.offset);
    return out;
  }();
  double correct = 0.0, total = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += 50) {
    const std::size_t end = std::min(windows.size(), start + 50);
    std::vector<WindowSample> masked;
    std::vector<MaskPlan> plans;
    for (std::size_t i = start; i < end; ++i) {
      auto [m, plan] = mask_fields(windows[i], 0.15, 5000 + i);
      masked.push_back(std::move(m));
      plans.push_back(std::move(plan));
    }
    std::vector<std::size_t> idx(masked.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto grid = batch_grid(masked, idx);
    auto logits = result.model.mlm_logits(result.model.encode(grid, masked.size(), 10).sequence, plans, offsets);
    correct += masked_accuracy(logits) * double(logits.count);
    total += double(logits.count);
  }
  const double acc = correct / total;
  o.require(acc > 0.95, "masked-field accuracy " + fmt("%.4f", acc));
  o.detail = "masked-field accuracy " + fmt("%.4f", acc) + " over " + fmt("%.0f", total) + " masked cells, 2000 steps";
  return o;
}

Outcome gpt_overfit() {
  Outcome o;
  TransactionConfig tc;
  tc.n_users = 2;
  tc.rows_per_user = 2000;
  auto c = transactions(tc, 1);
  GptTrainConfig g;
  auto r = train_per_user(c.entities[0], c.vocab, g, 1, [](const GptLogEntry& e) {
    if (e.step % 150 == 0) note("step " + std::to_string(e.step) + " loss " + fmt("%.4f", e.loss));
  });
  const double ppl = perplexity(r.model, r.windows);
  o.require(ppl < 1.5, "training-window perplexity " + fmt("%.4f", ppl));
  SamplingConfig sampling;
  auto generated = generate(r.model, c.vocab, first_rows(r.windows), g.window - 1, sampling, 17);
  std::size_t valid = 0;
  for (const auto& w : generated) valid += cells_in_field_ranges(w, c.vocab) && validate_window(w, c.vocab);
  o.require(valid == generated.size(), std::to_string(valid) + "/" + std::to_string(generated.size()) +
                                           " generated windows in range");
  o.detail = "perplexity " + fmt("%.4f", ppl) + " on " + std::to_string(r.windows.size()) + " windows; " +
             std::to_string(valid) + "/" + std::to_string(generated.size()) + " generated windows valid";
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  auto hist = [](std::vector<double> p) { return FieldHistogram{"x", std::move(p)}; };
  const double same = chi2_distance(hist({0.2, 0.3, 0.5}), hist({0.2, 0.3, 0.5}));
  const double disjoint = chi2_distance(hist({1.0, 0.0}), hist({0.0, 1.0}));
  const double mixed = chi2_distance(hist({0.5, 0.5}), hist({0.25, 0.75}));
  o.require(same == 0.0, "chi2 of identical histograms " + fmt("%.17g", same));
  o.require(disjoint == 1.0, "chi2 of disjoint histograms " + fmt("%.17g", disjoint));
  o.require(std::abs(mixed - 0.5 * (0.0625 / 0.75 + 0.0625 / 1.25)) < 1e-9, "chi2 mixed " + fmt("%.17g", mixed));
  o.require(std::abs(mixed - 0.06667) < 1e-5, "chi2 mixed " + fmt("%.17g", mixed));

  Rng rng(505);
  double worst_self = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index n = 20 + Eigen::Index(rng.index(100)), d = 1 + Eigen::Index(rng.index(32));
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal(0.0, 2.0) + 1.0;
    worst_self = std::max(worst_self, fid(x, x));
  }
  o.require(worst_self < 1e-6, "FID(D,D) up to " + fmt("%.3g", worst_self));

  double worst_1d = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + Eigen::Index(rng.index(200)), m = 2 + Eigen::Index(rng.index(200));
    Eigen::MatrixXd a(n, 1), b(m, 1);
    const double ma = rng.normal(0, 3), sa = 0.1 + 3 * rng.uniform(), mb = rng.normal(0, 3), sb = 0.1 + 3 * rng.uniform();
    for (Eigen::Index i = 0; i < n; ++i) a(i, 0) = rng.normal(ma, sa);
    for (Eigen::Index i = 0; i < m; ++i) b(i, 0) = rng.normal(mb, sb);
    auto moments = [](const Eigen::MatrixXd& v) {
      double mean = 0.0, ss = 0.0;
      for (Eigen::Index i = 0; i < v.rows(); ++i) mean += v(i, 0);
      mean /= double(v.rows());
      for (Eigen::Index i = 0; i < v.rows(); ++i) ss += (v(i, 0) - mean) * (v(i, 0) - mean);
      return std::pair{mean, std::sqrt(ss / double(v.rows() - 1))};
    };
    auto [mu1, s1] = moments(a);
    auto [mu2, s2] = moments(b);
    const double expected = (mu1 - mu2) * (mu1 - mu2) + (s1 - s2) * (s1 - s2);
    worst_1d = std::max(worst_1d, std::abs(fid(a, b) - expected));
  }
  o.require(worst_1d < 1e-6, "1-D FID closed-form error " + fmt("%.3g", worst_1d));

  double worst_sqrt = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + Eigen::Index(rng.index(64));
    const Eigen::Index k = trial % 3 == 0 ? std::max<Eigen::Index>(1, d / 2) : d;  // some rank-deficient
    Eigen::MatrixXd z(d, k);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    Eigen::MatrixXd a = z * z.transpose();
    Eigen::MatrixXd s = psd_sqrt(a);
    worst_sqrt = std::max(worst_sqrt, (s * s - a).norm() / a.norm());
  }
  o.require(worst_sqrt < 1e-6, "psd_sqrt reconstruction error " + fmt("%.3g", worst_sqrt));
  o.detail = "chi2 {0, 1, " + fmt("%.10f", mixed) + "}; FID(D,D) max " + fmt("%.1e", worst_self) +
             "; 1-D FID max error " + fmt("%.1e", worst_1d) + "; psd_sqrt max error " + fmt("%.1e", worst_sqrt);
  return o;
}

Outcome fraud_trend() {
  Outcome o;
  auto c = transactions(TransactionConfig{}, 7);
  auto windows = build_windows(c.entities, c.schema, 10, 10);
  auto split = split_indices(windows.size(), 0.2, 1);
  std::vector<WindowSample> train, test;
  for (auto i : split.train) train.push_back(windows[i]);
  for (auto i : split.test) test.push_back(windows[i]);
  std::size_t positives = 0;
  for (const auto& w : windows) positives += std::size_t(*w.label);
  note(std::to_string(windows.size()) + " windows, " + std::to_string(positives) + " fraudulent");

  PretrainConfig pc;  // MLM never reads labels
  auto bert = pretrain(train, c.vocab, pc, 3, [](const PretrainLogEntry& e) {
    if (e.step % 500 == 0) note("pretrain step " + std::to_string(e.step) + " loss " + fmt("%.4f", e.loss));
  });
  auto bert_train = tabbert_data(bert.model, train), bert_test = tabbert_data(bert.model, test);
  auto raw_train = raw_data(train), raw_test = raw_data(test);

  std::map<std::string, double> median;
  for (auto source : {FeatureSource::raw, FeatureSource::tabbert}) {
    for (auto head : {HeadKind::mlp, HeadKind::lstm}) {
      std::vector<double> f1;
      for (std::uint64_t s = 0; s < 3; ++s) {
        DownstreamConfig dc;
        dc.feature_source = source;
        dc.head = head;
        const bool raw = source == FeatureSource::raw;
        auto r = train_downstream(dc, raw ? raw_train : bert_train, raw ? raw_test : bert_test, c.vocab.total_size(),
                                  100 + s);
        f1.push_back(*r.metrics.f1);
      }
      const std::string key = to_string(source) + "+" + to_string(head);
      median[key] = median3(f1);
      note(key + " F1 " + fmt("%.4f", f1[0]) + " " + fmt("%.4f", f1[1]) + " " + fmt("%.4f", f1[2]) + ", median " +
           fmt("%.4f", median[key]));
    }
  }
  o.require(median["tabbert+lstm"] >= median["raw+mlp"] + 0.02, "TabBERT+LSTM does not beat Raw+MLP by 0.02");
  o.require(median["tabbert+mlp"] > median["raw+mlp"], "TabBERT features do not improve the MLP head");
  o.require(median["tabbert+lstm"] > median["raw+lstm"], "TabBERT features do not improve the LSTM head");
  o.detail = "median F1 raw+mlp " + fmt("%.4f", median["raw+mlp"]) + ", raw+lstm " + fmt("%.4f", median["raw+lstm"]) +
             ", tabbert+mlp " + fmt("%.4f", median["tabbert+mlp"]) + ", tabbert+lstm " +
             fmt("%.4f", median["tabbert+lstm"]);
  return o;
}

Outcome generation_fid_pattern() {
  Outcome o;
  TransactionConfig tc;
  tc.n_users = 2;
  tc.rows_per_user = 2000;
  auto c = transactions(tc, 11);
  std::vector<WindowSample> real[2];
  for (int u = 0; u < 2; ++u) real[u] = make_windows(c.entities[std::size_t(u)], 10, 10);

  PretrainConfig pc;
  pc.steps = 500;
  std::vector<WindowSample> both = real[0];
  both.insert(both.end(), real[1].begin(), real[1].end());
  auto backbone = pretrain(both, c.vocab, pc, 12).model;
  note("backbone trained on " + std::to_string(both.size()) + " windows");

  std::vector<WindowSample> generated[2];
  for (int u = 0; u < 2; ++u) {
    GptTrainConfig g;
    auto r = train_per_user(c.entities[std::size_t(u)], c.vocab, g, 20 + std::uint64_t(u));
    note("user " + c.entities[std::size_t(u)].entity_id + " perplexity " + fmt("%.4f", perplexity(r.model, r.windows)));
    generated[u] = generate(r.model, c.vocab, first_rows(r.windows), 9, SamplingConfig{}, 30 + std::uint64_t(u));
  }
  auto summary = [&](const std::vector<WindowSample>& w) {
    return gaussian_summary(to_matrix(extract_features(backbone, w)));
  };
  const GaussianSummary g0 = summary(generated[0]), g1 = summary(generated[1]), r0 = summary(real[0]),
                        r1 = summary(real[1]);
  const double own0 = frechet_distance(g0, r0), cross0 = frechet_distance(g0, r1);
  const double own1 = frechet_distance(g1, r1), cross1 = frechet_distance(g1, r0);
  o.require(own0 < cross0, "FID(gen_u1, real_u1) >= FID(gen_u1, real_u2)");
  o.require(own1 < cross1, "FID(gen_u2, real_u2) >= FID(gen_u2, real_u1)");
  o.detail = "FID(gen_u1,real_u1) " + fmt("%.3f", own0) + " < FID(gen_u1,real_u2) " + fmt("%.3f", cross0) +
             "; FID(gen_u2,real_u2) " + fmt("%.3f", own1) + " < FID(gen_u2,real_u1) " + fmt("%.3f", cross1);
  return o;
}

// Runs every CLI stage twice into the same directories and compares all
// artifacts byte for byte. Training logs carry wall-clock times and are skipped.
Outcome determinism() {
  Outcome o;
  setenv("TABFORMER_LOG", "quiet", 1);
  const fs::path root = fs::temp_directory_path() / "tabformer_acceptance_determinism";
  fs::remove_all(root);
  auto p = [&](const std::string& rel) { return (root / rel).string(); };
  const json enc = {{"layers", 1},         {"heads", 2},      {"hidden_dim", 16}, {"ffn_dim", 32},
                    {"max_positions", 16}, {"causal", false}, {"dropout", 0.0},   {"positional", true}};
  json gpt_model = enc;
  gpt_model["causal"] = true;
  gpt_model["max_positions"] = 130;
  const json pretrain = {{"steps", 30}, {"batch_size", 8}, {"model", {{"field", enc}, {"sequence", enc}}}};

  struct Stage {
    std::string command;
    json config;
    std::optional<std::uint64_t> seed;
    std::string out;
  };
  const std::vector<Stage> stages = {
      {"gen-data", {{"transactions", {{"n_users", 3}, {"rows_per_user", 150}}}}, 1, "tx"},
      {"build-vocab", {{"data", p("tx/data.csv")}, {"default_bins", 8}}, std::nullopt, "tx_vocab"},
      {"pretrain-bert", {{"data", p("tx/data.csv")}, {"vocab", p("tx_vocab")}, {"pretrain", pretrain}}, 2, "tx_bert"},
      {"extract-features",
       {{"data", p("tx/data.csv")}, {"vocab", p("tx_vocab")}, {"checkpoint", p("tx_bert/tabbert.ckpt")}},
       std::nullopt,
       "tx_features"},
      {"downstream",
       {{"data", p("tx/data.csv")},
        {"vocab", p("tx_vocab")},
        {"checkpoint", p("tx_bert/tabbert.ckpt")},
        {"downstream", {{"feature_source", "tabbert"}, {"head", "lstm"}, {"epochs", 3}}}},
       3,
       "tx_downstream"},
      {"train-gpt",
       {{"data", p("tx/data.csv")},
        {"vocab", p("tx_vocab")},
        {"user", "u0"},
        {"gpt", {{"steps", 20}, {"batch_size", 4}, {"model", gpt_model}}}},
       4,
       "tx_gpt"},
      {"generate",
       {{"data", p("tx/data.csv")}, {"vocab", p("tx_vocab")}, {"checkpoint", p("tx_gpt/tabgpt_u0.ckpt")}},
       5,
       "tx_gen"},
      {"evaluate",
       {{"vocab", p("tx_vocab")},
        {"checkpoint", p("tx_bert/tabbert.ckpt")},
        {"real", {{"data", p("tx/data.csv")}, {"user", "u0"}}},
        {"generated", {{"tokens", p("tx_gen/generated.tokens.json")}}},
        {"extra", json::array({{{"data", p("tx/data.csv")}, {"user", "u1"}}})}},
       std::nullopt,
       "tx_eval"},
      {"gen-data", {{"kind", "pollution"}, {"pollution", {{"n_sites", 2}, {"rows_per_site", 200}}}}, 6, "pm"},
      {"build-vocab", {{"data", p("pm/data.csv")}, {"kind", "pollution"}, {"default_bins", 8}}, std::nullopt,
       "pm_vocab"},
      {"pretrain-bert", {{"data", p("pm/data.csv")}, {"vocab", p("pm_vocab")}, {"pretrain", pretrain}}, 7, "pm_bert"},
      {"downstream",
       {{"data", p("pm/data.csv")},
        {"vocab", p("pm_vocab")},
        {"checkpoint", p("pm_bert/tabbert.ckpt")},
        {"downstream", {{"feature_source", "tabbert"}, {"head", "mlp"}, {"task", "regression"}, {"epochs", 3}}}},
       8,
       "pm_downstream"},
  };

  auto snapshot = [&](const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.ends_with("_log.jsonl")) continue;
      out[name] = sha256_file(entry.path());
    }
    return out;
  };
  std::size_t artifacts = 0;
  for (const auto& s : stages) {
    cli::RunContext ctx{s.config, s.seed, root / s.out};
    cli::run_command(s.command, ctx);
    const auto first = snapshot(ctx.out);
    cli::run_command(s.command, ctx);
    const auto second = snapshot(ctx.out);
    o.require(first == second, s.command + " into " + s.out + " is not byte-identical on rerun");
    artifacts += first.size();
  }
  // A different seed must change the seeded artifacts.
  cli::RunContext reseeded{stages[0].config, 99, root / "tx_reseeded"};
  cli::run_command("gen-data", reseeded);
  o.require(sha256_file(root / "tx_reseeded" / "data.csv") != sha256_file(root / "tx" / "data.csv"),
            "gen-data ignores the seed");
  o.detail = std::to_string(stages.size()) + " stages rerun, " + std::to_string(artifacts) +
             " artifacts byte-identical";
  return o;
}

Outcome pipeline_properties() {
  Outcome o;
  Rng rng(909);
  TransactionConfig tc;
  tc.n_users = 4;
  tc.rows_per_user = 120;
  auto raw = gen_transactions(tc, 41);
  auto schema = infer_schema(raw.table.header, transaction_hints());
  auto vocab = build_vocabulary(raw.table, schema, {8, {}});
  auto entities = encode_table(raw.table, vocab);

  // Window counts against floor((M - T) / stride) + 1, on truncated entities.
  std::size_t count_cases = 0, count_ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    EntityRows e = entities[rng.index(entities.size())];
    const std::size_t m = rng.index(e.tokens.size() + 1);
    e.tokens.resize(m);
    e.labels.resize(std::min(e.labels.size(), m));
    const std::size_t t = 1 + rng.index(15), stride = 1 + rng.index(12);
    const std::size_t expected = m < t ? 0 : (m - t) / stride + 1;
    auto windows = make_windows(e, t, stride);
    bool ok = windows.size() == expected;
    for (std::size_t k = 0; ok && k < windows.size(); ++k) ok = windows[k].start_index == k * stride;
    count_ok += ok;
    ++count_cases;
  }
  o.require(count_ok == count_cases, "window counts " + std::to_string(count_ok) + "/" + std::to_string(count_cases));

  // Mask budget on random grids.
  std::size_t mask_ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.index(20), n = 2 + rng.index(14);
    WindowSample w;
    w.rows = t, w.fields = n;
    w.tokens.assign(t * n, kNumSpecialTokens);
    auto [masked, plan] = mask_fields(w, 0.15, 700 + std::uint64_t(trial));
    const auto expected = std::max<std::size_t>(1, std::size_t(std::llround(0.15 * double(t * n))));
    const auto in_grid = std::size_t(std::count(masked.tokens.begin(), masked.tokens.end(), kMaskId));
    mask_ok += plan.size() == expected && in_grid == expected;
  }
  o.require(mask_ok == 200, "mask budget " + std::to_string(mask_ok) + "/200");

  // Upsampling on random imbalanced label sets.
  std::size_t up_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.index(500);
    const double rate = 0.01 + 0.4 * rng.uniform();
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng.uniform() < rate ? 1 : 0;
    labels[0] = 1, labels[1] = 0;
    auto idx = upsample_minority(labels, 800 + std::uint64_t(trial));
    double pos = 0, neg = 0;
    for (auto i : idx) (labels[i] ? pos : neg) += 1;
    up_ok += std::abs(pos - neg) <= 0.01 * std::max(pos, neg);
  }
  o.require(up_ok == 100, "upsampling " + std::to_string(up_ok) + "/100");

  // The label column is not a model field, and flipping every label leaves
  // the pretraining grids unchanged.
  const auto label_col = schema.label_column();
  o.require(label_col.has_value(), "transactions schema has no label column");
  bool label_absent = true;
  for (const auto& f : vocab.fields()) label_absent = label_absent && f.field_name != raw.table.header[*label_col];
  o.require(label_absent, "label column is a vocabulary field");
  auto windows = build_windows(entities, schema, 10, 5);
  auto flipped_table = raw.table;
  for (auto& row : flipped_table.rows) row[*label_col] = row[*label_col] == "Yes" ? "No" : "Yes";
  auto flipped = build_windows(encode_table(flipped_table, vocab), schema, 10, 5);
  bool grids_same = flipped.size() == windows.size();
  bool labels_differ = false;
  for (std::size_t i = 0; grids_same && i < windows.size(); ++i) {
    grids_same = windows[i].tokens == flipped[i].tokens && cells_in_field_ranges(windows[i], vocab);
    labels_differ = labels_differ || windows[i].label != flipped[i].label;
  }
  o.require(grids_same, "pretraining grids depend on the label column");
  o.require(labels_differ, "flipping the label column did not change any window label");
  o.detail = std::to_string(count_cases) + " window-count cases, 200 mask budgets, 100 upsampling sets, " +
             std::to_string(windows.size()) + " label-blind grids";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient integrity", 120, gradient_integrity},
      {2, "hierarchy locality", 60, hierarchy_locality},
      {3, "MLM overfit", 600, mlm_overfit},
      {4, "TabGPT overfit and structure", 600, gpt_overfit},
      {5, "metric oracles", 60, metric_oracles},
      {6, "fraud F1 trend", 1800, fraud_trend},
      {7, "per-user FID pattern", 1200, generation_fid_pattern},
      {8, "determinism", 0, determinism},
      {9, "pipeline properties", 0, pipeline_properties},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    std::printf("[%d] %s\n", c.id, c.name.c_str());
    std::fflush(stdout);
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double elapsed = seconds_since(start);
    if (c.budget_seconds > 0 && elapsed >= c.budget_seconds) {
      o.pass = false;
      o.detail += "; runtime " + fmt("%.0f", elapsed) + " s exceeds " + fmt("%.0f", c.budget_seconds) + " s";
    }
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), elapsed);
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
