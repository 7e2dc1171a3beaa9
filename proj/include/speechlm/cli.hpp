#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace speechlm {

// Full command-line surface: ingest, vocab, pretrain, finetune, generate,
// eval, gradcheck, rate. args excludes the program name. Returns the
// process exit code: 0 success, 1 usage error, 2 data error, 3 numeric
// failure. Results go to out, warnings and errors to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace speechlm
