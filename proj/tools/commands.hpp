#ifndef PILOTWAVE_TOOLS_COMMANDS_HPP
#define PILOTWAVE_TOOLS_COMMANDS_HPP

namespace pwcli {

// Full CLI entry point. Returns the process exit code: 0 success, 2 config
// error, 3 numerical failure.
int run_cli(int argc, char** argv);

}  // namespace pwcli

#endif
