#ifndef PEMI_CHECKPOINT_HPP
#define PEMI_CHECKPOINT_HPP

// A checkpoint is a directory:
//
//   encoder.bin     frozen encoder ("PEMI-ENC")
//   trainable.bin   prompts, bottom embeddings, weight units ("PEMI-TRN")
//   hierarchy.json
//   vocab.tsv
//   layout.txt

#include <filesystem>
#include <fstream>
#include <string>

#include "pemi/array_io.hpp"
#include "pemi/encoder.hpp"
#include "pemi/hierarchy.hpp"
#include "pemi/hlr.hpp"
#include "pemi/prompt_template.hpp"
#include "pemi/train.hpp"

namespace pemi {

inline constexpr char kTrainableMagic[] = "PEMI-TRN";

inline void save_trainable(const PemiModel& m, const std::string& path) {
  ArrayFile file;
  file.magic = kTrainableMagic;
  file.header = {{"prompt_count", static_cast<std::int64_t>(m.layout.prompt_count())},
                 {"d_model", static_cast<std::int64_t>(m.encoder.config.d_model)},
                 {"levels", static_cast<std::int64_t>(m.hierarchy.num_levels())},
                 {"normalization", m.verbalizer.normalization == Normalization::kSoftmax ? 0 : 1}};
  file.arrays.push_back({"prompts", m.prompts});
  file.arrays.push_back({"verbalizer.bottom", m.verbalizer.bottom});
  for (std::size_t z = 0; z < m.verbalizer.units.size(); ++z) file.arrays.push_back({units_name(z), m.verbalizer.units[z]});
  write_array_file(path, file);
}

inline void save_checkpoint(const PemiModel& m, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create checkpoint directory " + dir + ": " + ec.message());
  const fs::path root(dir);
  save_weights(m.encoder, (root / "encoder.bin").string());
  save_trainable(m, (root / "trainable.bin").string());
  save_hierarchy(m.hierarchy, (root / "hierarchy.json").string());
  save_vocab(m.vocab, (root / "vocab.tsv").string());
  std::ofstream layout(root / "layout.txt", std::ios::binary | std::ios::trunc);
  if (!layout) throw CheckpointError("cannot write " + (root / "layout.txt").string());
  layout << m.layout.to_string() << '\n';
}

inline PemiModel load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw CheckpointError("checkpoint directory " + dir + " does not exist");
  PemiModel m;
  m.encoder = load_weights((root / "encoder.bin").string());
  try {
    m.hierarchy = load_hierarchy((root / "hierarchy.json").string());
    m.vocab = load_vocab((root / "vocab.tsv").string());
  } catch (const DataError& e) {
    throw CheckpointError(dir + ": " + e.what());
  }
  std::ifstream layout_in(root / "layout.txt");
  std::string layout;
  if (!layout_in || !std::getline(layout_in, layout)) throw CheckpointError(dir + ": missing layout.txt");
  try {
    m.layout = parse_layout(layout);
  } catch (const LayoutError& e) {
    throw CheckpointError(dir + ": " + e.what());
  }
  if (m.vocab.size() != m.encoder.config.vocab_size) {
    throw CheckpointError(dir + ": vocab.tsv has " + std::to_string(m.vocab.size()) + " entries, encoder expects " +
                          std::to_string(m.encoder.config.vocab_size));
  }

  const std::string trn = (root / "trainable.bin").string();
  const ArrayFile file = read_array_file(trn, kTrainableMagic);
  const std::size_t k = m.layout.prompt_count(), d = m.encoder.config.d_model;
  auto check = [&](const char* key, std::size_t want) {
    const auto have = file.require_header(key);
    if (have != static_cast<std::int64_t>(want)) {
      throw CheckpointError(trn + ": " + key + " is " + std::to_string(have) + ", expected " + std::to_string(want));
    }
  };
  check("prompt_count", k);
  check("d_model", d);
  check("levels", m.hierarchy.num_levels());
  const auto norm = file.require_header("normalization");
  if (norm != 0 && norm != 1) throw CheckpointError(trn + ": unknown normalization code " + std::to_string(norm));
  m.verbalizer.normalization = norm == 0 ? Normalization::kSoftmax : Normalization::kL1;
  m.prompts = expect_array(file, "prompts", {k, d}).with_requires_grad(true);
  m.verbalizer.bottom =
      expect_array(file, "verbalizer.bottom", {m.hierarchy.level_size(m.hierarchy.bottom_level()), d})
          .with_requires_grad(true);
  for (std::size_t z = 0; z + 1 < m.hierarchy.num_levels(); ++z) {
    m.verbalizer.units.push_back(
        expect_array(file, units_name(z), {m.hierarchy.edges(z).size()}).with_requires_grad(true));
  }
  if (file.arrays.size() != 2 + m.verbalizer.units.size()) throw CheckpointError(trn + " holds unexpected arrays");
  return m;
}

}  // namespace pemi

#endif  // PEMI_CHECKPOINT_HPP
