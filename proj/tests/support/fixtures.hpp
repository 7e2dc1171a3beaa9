#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace speechlm::testfix {

// Sentence pools for the synthetic corpora. Every sentence has 13 to 20
// words under the toolkit tokenizer, so any run of complete sentences
// crosses 50 words no later than the fourth sentence end.
const std::vector<std::string>& shared_pool();    // in both corpora
const std::vector<std::string>& target_pool();    // fixture-corpus only
const std::vector<std::string>& pretrain_pool();  // generic-corpus only

// 200 deterministic paragraphs of 2-4 sentences from shared + target pools.
std::vector<std::string> target_paragraphs();

// 600 deterministic paragraphs of 2-4 sentences from shared + pretrain pools.
std::vector<std::string> pretrain_paragraphs();

std::vector<std::vector<std::string>> tokenized(const std::vector<std::string>& paragraphs);

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// RAII temp directory under the system temp root.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace speechlm::testfix
