#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace parakit {

// Entry point shared by the installed binary and the tests. args excludes the
// program name. Success returns 0; failures print one machine-parsable JSON
// line ({"error": kind, "message": text}) on err and return the kind's exit
// code. Replaying a run manifest's argv through this function reproduces the
// run's artifacts bit-exactly.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace parakit
