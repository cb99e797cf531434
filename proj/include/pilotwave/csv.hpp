#ifndef PILOTWAVE_CSV_HPP
#define PILOTWAVE_CSV_HPP

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace pilotwave {

// %.17g round-trips every finite double, so CSV artifacts are lossless and
// byte-stable across reruns.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, std::initializer_list<const char*> header)
        : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open " + path);
        bool first = true;
        for (const char* h : header) {
            if (!first) out_ << ',';
            out_ << h;
            first = false;
        }
        out_ << '\n';
    }

    void row(std::initializer_list<double> values) {
        bool first = true;
        for (double v : values) {
            if (!first) out_ << ',';
            out_ << fmt_double(v);
            first = false;
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace pilotwave

#endif
