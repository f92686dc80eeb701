#include "rpalab/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace rpalab {

std::vector<std::size_t> encode_bytes(const std::string& text) {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string decode_bytes(const std::vector<std::size_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (id > 255) throw std::out_of_range("decode_bytes: id " + std::to_string(id) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

Corpus load_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file '" + path + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (text.empty()) throw std::runtime_error("corpus file '" + path + "' is empty");
  return {encode_bytes(text), 256, "file:" + path};
}

void SyntheticTaskConfig::validate() const {
  if (filler < 2) throw std::invalid_argument("synthetic task needs at least 2 filler symbols");
  if (values < 1) throw std::invalid_argument("synthetic task needs at least 1 value symbol");
  if (min_gap < 2 || min_gap > max_gap) throw std::invalid_argument("synthetic task needs 2 <= min_gap <= max_gap");
  if (min_spacing > max_spacing) throw std::invalid_argument("synthetic task needs min_spacing <= max_spacing");
  if (order != 1 && order != 2) throw std::invalid_argument("synthetic task order must be 1 or 2");
  if (noise < 0.0 || noise > 1.0) throw std::invalid_argument("synthetic task noise must lie in [0, 1]");
  if (length == 0) throw std::invalid_argument("synthetic task length must be positive");
}

Corpus synthetic_long_span(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<std::size_t> ids;
  ids.reserve(cfg.length + cfg.max_gap + cfg.max_spacing + 4);
  std::size_t p1 = 0, p2 = 1;
  auto filler = [&] {
    // mostly a deterministic function of the two previous filler symbols
    std::size_t next = cfg.order == 1 ? (3 * p1 + 1) % cfg.filler : (p1 + 2 * p2 + 1) % cfg.filler;
    if (rng.uniform() < cfg.noise) next = rng.below(cfg.filler);
    p2 = p1;
    p1 = next;
    ids.push_back(next);
  };
  auto span = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
  while (ids.size() < cfg.length) {
    for (std::size_t i = span(cfg.min_spacing, cfg.max_spacing); i > 0; --i) filler();
    const std::size_t v = cfg.filler + 2 + rng.below(cfg.values);
    ids.push_back(cfg.key_token());
    ids.push_back(v);
    // gap counts positions from the value to the query answer
    for (std::size_t i = span(cfg.min_gap, cfg.max_gap); i > 2; --i) filler();
    ids.push_back(cfg.query_token());
    ids.push_back(v);
  }
  ids.resize(cfg.length);
  return {std::move(ids), cfg.vocab(), "synthetic:long_span"};
}

std::vector<std::size_t> recall_positions(const std::vector<std::size_t>& ids, const SyntheticTaskConfig& cfg) {
  std::vector<std::size_t> out;
  bool keyed = false;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i - 1] == cfg.key_token()) keyed = true;
    if (ids[i - 1] == cfg.query_token() && keyed) out.push_back(i);
  }
  return out;
}

Splits split_corpus(const Corpus& corpus, double val_fraction, double test_fraction) {
  if (corpus.ids.empty()) throw std::invalid_argument("split_corpus: empty corpus");
  if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0)
    throw std::invalid_argument("split_corpus: fractions must be nonnegative and sum below 1");
  const std::size_t n = corpus.ids.size();
  const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(n));
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(n));
  const std::size_t n_train = n - n_val - n_test;
  Splits s;
  s.train.assign(corpus.ids.begin(), corpus.ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(corpus.ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               corpus.ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(corpus.ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), corpus.ids.end());
  return s;
}

TrainSampler::TrainSampler(const std::vector<std::size_t>& ids, Rng rng) : ids_(&ids), rng_(std::move(rng)) {}

std::size_t TrainSampler::draw_offset(std::size_t context) {
  const std::size_t n = ids_->size();
  if (context == 0 || context >= n)
    throw std::invalid_argument("train context " + std::to_string(context) + " needs a split longer than itself (" +
                                std::to_string(n) + " tokens)");
  return rng_.below(n - context);
}

Batch TrainSampler::next(std::size_t batch, std::size_t context) {
  Batch b;
  b.batch = batch;
  b.length = context;
  b.x.reserve(batch * context);
  b.y.reserve(batch * context);
  const auto& ids = *ids_;
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t s = draw_offset(context);
    b.x.insert(b.x.end(), ids.begin() + static_cast<std::ptrdiff_t>(s),
               ids.begin() + static_cast<std::ptrdiff_t>(s + context));
    b.y.insert(b.y.end(), ids.begin() + static_cast<std::ptrdiff_t>(s + 1),
               ids.begin() + static_cast<std::ptrdiff_t>(s + context + 1));
  }
  return b;
}

std::size_t eval_window_count(std::size_t n, std::size_t context) {
  if (context == 0) throw std::invalid_argument("eval context must be positive");
  return n == 0 ? 0 : (n - 1) / context;
}

std::vector<Batch> eval_batches(const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch,
                                std::size_t max_windows) {
  if (batch == 0) throw std::invalid_argument("eval batch must be positive");
  std::size_t windows = eval_window_count(ids.size(), context);
  if (max_windows > 0) windows = std::min(windows, max_windows);
  std::vector<Batch> out;
  for (std::size_t w = 0; w < windows; w += batch) {
    Batch b;
    b.batch = std::min(batch, windows - w);
    b.length = context;
    for (std::size_t r = 0; r < b.batch; ++r) {
      const std::size_t s = (w + r) * context;
      b.x.insert(b.x.end(), ids.begin() + static_cast<std::ptrdiff_t>(s),
                 ids.begin() + static_cast<std::ptrdiff_t>(s + context));
      b.y.insert(b.y.end(), ids.begin() + static_cast<std::ptrdiff_t>(s + 1),
                 ids.begin() + static_cast<std::ptrdiff_t>(s + context + 1));
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace rpalab
