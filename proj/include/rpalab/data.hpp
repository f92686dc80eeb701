#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rpalab/rng.hpp"

namespace rpalab {

struct Corpus {
  std::vector<std::size_t> ids;
  std::size_t vocab = 0;
  std::string source;
};

std::vector<std::size_t> encode_bytes(const std::string& text);
std::string decode_bytes(const std::vector<std::size_t>& ids);

/// Byte-level corpus (V = 256) from a text file. Throws on unreadable or empty files.
Corpus load_text_file(const std::string& path);

/// Key/query recall stream. Filler follows a noisy first- or second-order rule over `filler` symbols.
/// Each record writes KEY v, then after a gap in [min_gap, max_gap] writes QUERY v again,
/// so the token after QUERY is fixed by content that many positions back.
struct SyntheticTaskConfig {
  std::size_t length = 200000;
  std::size_t filler = 8;
  std::size_t values = 6;
  std::size_t min_gap = 20;
  std::size_t max_gap = 28;
  std::size_t min_spacing = 4;  // filler between a query answer and the next key
  std::size_t max_spacing = 12;
  double noise = 0.1;
  std::size_t order = 2;  // filler depends on the previous 1 or 2 filler symbols
  std::uint64_t seed = 1;

  std::size_t vocab() const { return filler + 2 + values; }
  std::size_t key_token() const { return filler; }
  std::size_t query_token() const { return filler + 1; }
  void validate() const;
};

Corpus synthetic_long_span(const SyntheticTaskConfig& cfg);

/// Positions whose token is determined by the latest key: the token right after each query.
std::vector<std::size_t> recall_positions(const std::vector<std::size_t>& ids, const SyntheticTaskConfig& cfg);

struct Splits {
  std::vector<std::size_t> train, val, test;
};

/// Contiguous train | val | test split by fractions of the stream.
Splits split_corpus(const Corpus& corpus, double val_fraction, double test_fraction);

/// x and y are row-major [batch, length]; y is x shifted one token ahead.
struct Batch {
  std::vector<std::size_t> x, y;
  std::size_t batch = 0;
  std::size_t length = 0;
};

/// Random contiguous windows with start offsets uniform over [0, N - context - 1].
class TrainSampler {
 public:
  TrainSampler(const std::vector<std::size_t>& ids, Rng rng);
  std::size_t draw_offset(std::size_t context);
  Batch next(std::size_t batch, std::size_t context);

 private:
  const std::vector<std::size_t>* ids_;
  Rng rng_;
};

/// floor((N - 1) / context) sequential non-overlapping windows; the short tail is dropped.
std::size_t eval_window_count(std::size_t n, std::size_t context);

/// Windows grouped into batches of at most `batch` rows, in order.
std::vector<Batch> eval_batches(const std::vector<std::size_t>& ids, std::size_t context, std::size_t batch,
                                std::size_t max_windows = 0);

}  // namespace rpalab
