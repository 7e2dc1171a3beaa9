#include "support/fixtures.hpp"

#include <fstream>
#include <random>
#include <stdexcept>

#include "speechlm/corpus.hpp"

namespace speechlm::testfix {

const std::vector<std::string>& shared_pool() {
  static const std::vector<std::string> pool = {
      "We reaffirm our steadfast commitment to the purposes and principles of the United Nations "
      "Charter.",
      "The General Assembly remains the most representative forum for dialogue among all member "
      "states.",
      "Our delegation believes that lasting peace can only be achieved through patient and "
      "inclusive negotiation.",
      "Climate change continues to threaten the livelihoods of millions of people across every "
      "region.",
      "We call upon the international community to honour its obligations under the relevant "
      "resolutions.",
      "The proliferation of nuclear weapons remains one of the gravest dangers facing our common "
      "future.",
      "Sustainable development requires genuine partnership between developed and developing "
      "countries at every level of society.",
      "My government has taken concrete steps to strengthen the rule of law within our borders.",
      "The security council must be reformed to reflect the political realities of the present "
      "century.",
      "We express our deep gratitude to the secretary general for his tireless efforts this "
      "year.",
      "Regional cooperation has proven to be an indispensable instrument for stability and shared "
      "economic growth.",
      "The human rights of every citizen must be protected without distinction of any kind.",
      "Our people have endured decades of hardship and deserve a future of dignity and hope.",
      "We welcome the progress achieved at the recent conference on disarmament held in Geneva.",
      "The eradication of extreme poverty remains the central moral challenge of our generation "
      "today.",
      "International law must govern the conduct of states in their relations with one another.",
      "We support the peaceful settlement of disputes through mediation and recourse to judicial "
      "institutions.",
      "The charter obliges every member state to refrain from the threat or use of force.",
      "Terrorism in all its forms constitutes a grave assault on the values of this "
      "organization.",
      "We must ensure that the benefits of globalization are shared fairly among all nations.",
  };
  return pool;
}

const std::vector<std::string>& target_pool() {
  static const std::vector<std::string> pool = {
      "The treaty on the non-proliferation of nuclear weapons entered into force in 1970.",
      "Our delegation attaches great importance to the full implementation of resolution 1325 on "
      "women.",
      "The small island states face an existential threat from rising seas and warming oceans.",
      "We commend the peacekeeping missions that protect civilians in conflict zones around the "
      "world.",
      "The general assembly (in its wisdom) has placed this question on our agenda.",
      "Multilateral cooperation remains the only viable path toward a just and durable peace "
      "everywhere.",
      "My country's commitment to the charter has never wavered since our admission in 1955.",
      "The right of peoples to self-determination is a cornerstone of the international legal "
      "order.",
  };
  return pool;
}

const std::vector<std::string>& pretrain_pool() {
  static const std::vector<std::string> pool = {
      "The committee examined the annual report and adopted its recommendations without a formal "
      "vote.",
      "Delegates from many countries spoke in favour of strengthening the existing framework of "
      "cooperation.",
      "The president of the assembly invited the distinguished representative to take the floor "
      "first.",
      "Economic recovery depends on open markets and the steady flow of investment across "
      "borders.",
      "The report describes the humanitarian situation in the region as fragile but slowly "
      "improving.",
      "Education and public health remain the foundations upon which every prosperous society is "
      "built.",
      "The working group met three times during the session to consider the draft articles.",
      "A durable settlement requires compromise from every party and sustained support from the "
      "region.",
      "The conference concluded with a declaration reaffirming the shared responsibilities of all "
      "participating states.",
      "Observers noted that the negotiations had entered a decisive and particularly delicate "
      "final phase.",
      "The secretariat circulated a revised memorandum summarizing the financial implications of "
      "the proposed programme.",
      "Scientific cooperation between universities has expanded rapidly over the past decade in "
      "many fields.",
      "The council heard statements from twelve speakers before suspending the meeting in the "
      "afternoon.",
      "Trade between the two regions has grown steadily despite persistent obstacles and "
      "occasional setbacks.",
      "The panel recommended further study of the question before any binding decision is taken.",
      "National authorities retain the primary responsibility for the protection of their own "
      "civilian populations.",
      "The drafting committee prepared a consolidated text reflecting the amendments submitted by "
      "several delegations.",
      "Voluntary contributions from member states finance the greater part of the agency's field "
      "activities.",
      "The experts agreed that reliable statistics are essential for measuring progress toward "
      "agreed goals.",
      "Respect for treaty obligations is the basis of confidence between governments and their "
      "peoples.",
  };
  return pool;
}

namespace {

std::vector<std::string> build_paragraphs(const std::vector<std::string>& a,
                                          const std::vector<std::string>& b, std::size_t count,
                                          std::uint64_t seed) {
  std::vector<std::string> sentences = a;
  sentences.insert(sentences.end(), b.begin(), b.end());

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sentences.size() - 1);
  std::uniform_int_distribution<int> length(2, 4);

  std::vector<std::string> paragraphs;
  paragraphs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int n = length(rng);
    std::string para;
    for (int s = 0; s < n; ++s) {
      if (s > 0) para += ' ';
      para += sentences[pick(rng)];
    }
    paragraphs.push_back(std::move(para));
  }
  return paragraphs;
}

}  // namespace

std::vector<std::string> target_paragraphs() {
  return build_paragraphs(shared_pool(), target_pool(), 200, 7);
}

std::vector<std::string> pretrain_paragraphs() {
  return build_paragraphs(shared_pool(), pretrain_pool(), 600, 11);
}

std::vector<std::vector<std::string>> tokenized(const std::vector<std::string>& paragraphs) {
  std::vector<std::vector<std::string>> out;
  out.reserve(paragraphs.size());
  for (const std::string& para : paragraphs) {
    out.push_back(tokenize(para));
  }
  return out;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string());
  }
  for (const std::string& line : lines) out << line << "\n";
}

TempDir::TempDir() {
  static std::mt19937_64 rng(std::random_device{}());
  const auto root = std::filesystem::temp_directory_path();
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto candidate = root / ("speechlm_test_" + std::to_string(rng()));
    if (std::filesystem::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create a temp directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace speechlm::testfix
