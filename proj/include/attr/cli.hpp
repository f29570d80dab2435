#pragma once

namespace attr {

// Subcommand front-end (synth | train | infer | eval | ablate).
// Exit codes: 0 ok, 2 config error, 3 data error.
int run_cli(int argc, const char* const* argv);

}  // namespace attr
