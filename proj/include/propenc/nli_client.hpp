#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "propenc/errors.hpp"
#include "propenc/pairing.hpp"

namespace propenc {

// Adapter for an external NLI process speaking a line protocol on its
// stdin/stdout: one request "premise \t hypothesis \n", one response line
// "entail" or "not-entail". Tabs and newlines inside the texts are replaced
// with spaces before sending.
class PipeOracle final : public EntailmentOracle {
 public:
  explicit PipeOracle(const std::vector<std::string>& argv) {
    if (argv.empty()) throw DataError("PipeOracle: empty command");
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw DataError("PipeOracle: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw DataError("PipeOracle: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    to_child_ = fdopen(to_child[1], "w");
    from_child_ = fdopen(from_child[0], "r");
    if (!to_child_ || !from_child_)
      throw DataError("PipeOracle: fdopen() failed");
  }

  ~PipeOracle() override {
    if (to_child_) fclose(to_child_);
    if (from_child_) fclose(from_child_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  PipeOracle(const PipeOracle&) = delete;
  PipeOracle& operator=(const PipeOracle&) = delete;

  bool entails(std::string_view premise,
               std::string_view hypothesis) const override {
    const std::string req = sanitize(premise) + "\t" + sanitize(hypothesis);
    if (std::fprintf(to_child_, "%s\n", req.c_str()) < 0 ||
        std::fflush(to_child_) != 0)
      throw DataError("PipeOracle: write to NLI process failed");
    char buf[256];
    if (!std::fgets(buf, sizeof buf, from_child_))
      throw DataError("PipeOracle: NLI process closed its output");
    std::string resp(buf);
    while (!resp.empty() && (resp.back() == '\n' || resp.back() == '\r'))
      resp.pop_back();
    if (resp == "entail") return true;
    if (resp == "not-entail") return false;
    throw DataError("PipeOracle: unexpected response: " + resp);
  }

 private:
  static std::string sanitize(std::string_view s) {
    std::string out(s);
    for (char& c : out)
      if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
  }

  pid_t pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
};

}  // namespace propenc
