// SPDX-License-Identifier: Apache-2.0
//
// Output artifacts: schema-checked CSV tables, JSON documents, per-command
// manifests and a gnuplot script for the emitted series.
#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"

namespace flipdiff {

inline constexpr char const* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

struct SchemaError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct CsvSchema
{
    std::string name;
    int version = 1;
    std::vector<std::string> columns;
};

/// Rows are checked against the schema as they are added: the column count
/// must match and every value must be finite.
class CsvTable
{
  public:
    explicit CsvTable(CsvSchema s) : schema_(std::move(s))
    {
        if (schema_.columns.empty()) throw SchemaError("schema " + schema_.name + " has no columns");
        os_ << "# schema " << schema_.name << " v" << schema_.version << "\n";
        for (std::size_t i = 0; i < schema_.columns.size(); ++i) os_ << (i ? "," : "") << schema_.columns[i];
        os_ << "\n";
    }

    void row(std::vector<double> const& v)
    {
        if (v.size() != schema_.columns.size())
            throw SchemaError("schema " + schema_.name + ": row " + std::to_string(rows_) + " has " + std::to_string(v.size())
                              + " values for " + std::to_string(schema_.columns.size()) + " columns");
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i]))
                throw SchemaError("schema " + schema_.name + ": non-finite " + schema_.columns[i] + " in row "
                                  + std::to_string(rows_));
            os_ << (i ? "," : "") << detail::fmt_double(v[i]);
        }
        os_ << "\n";
        ++rows_;
    }

    CsvSchema const& schema() const { return schema_; }
    std::size_t rows() const { return rows_; }
    std::string str() const { return os_.str(); }

  private:
    CsvSchema schema_;
    std::ostringstream os_;
    std::size_t rows_ = 0;
};

/// Reads back the two header lines of an emitted table.
inline CsvSchema read_csv_schema(std::istream& is)
{
    CsvSchema s;
    std::string line, tag, ver;
    if (!std::getline(is, line)) throw SchemaError("empty csv");
    std::istringstream hs(line);
    std::string hash;
    if (!(hs >> hash >> tag >> s.name >> ver) || hash != "#" || tag != "schema" || ver.size() < 2 || ver[0] != 'v')
        throw SchemaError("missing '# schema <name> v<n>' line");
    s.version = std::stoi(ver.substr(1));
    if (!std::getline(is, line)) throw SchemaError("missing column header");
    s.columns = detail::split(line, ',');
    return s;
}

inline std::uint64_t fnv1a(std::string const& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// File-name tag: seed plus a hash of every result-relevant key.
inline std::string run_tag(RunConfig c)
{
    c.output.clear();
    c.threads = 0;
    return "s" + std::to_string(c.seed) + "_" + hex64(fnv1a(c.to_ini())).substr(0, 8);
}

inline Json to_json(Eigen::MatrixXd const& m)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        a.push_back(r);
    }
    return a;
}

inline Eigen::MatrixXd matrix_from_json(Json const& a)
{
    const auto n = Eigen::Index(a.size());
    Eigen::MatrixXd m(n, n ? Eigen::Index(a[0].size()) : 0);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = a[std::size_t(i)][std::size_t(j)].is_number() ? a[std::size_t(i)][std::size_t(j)].get<double>() : NAN;
    return m;
}

inline Json model_json(RunConfig const& c)
{
    return Json{{"dim", c.dim}, {"side", c.side}, {"kernel", c.kernel}, {"lambda", c.lambda}, {"rate", c.rate}};
}

//---------------------------------------------------------------------------//
/// Files written by one command; the manifest lists them with sizes and hashes.
class OutputSet
{
  public:
    OutputSet(std::filesystem::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command))
    {
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path const& dir() const { return dir_; }

    std::filesystem::path write(std::string const& name, std::string const& content, std::string const& kind)
    {
        auto path = dir_ / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        os << content;
        if (!os) throw std::runtime_error("write failed for " + path.string());
        entries_.push_back({name, kind, content.size(), fnv1a(content)});
        return path;
    }

    std::filesystem::path write(std::string const& name, CsvTable const& t)
    {
        // the emitted text must parse back to the schema it was built from
        std::istringstream is(t.str());
        CsvSchema back = read_csv_schema(is);
        if (back.name != t.schema().name || back.version != t.schema().version || back.columns != t.schema().columns)
            throw SchemaError("schema round trip failed for " + name);
        return write(name, t.str(), "csv:" + t.schema().name + "/v" + std::to_string(t.schema().version));
    }

    std::filesystem::path write(std::string const& name, Json const& j)
    {
        return write(name, j.dump(2) + "\n", "json:" + j.value("schema", std::string("?")));
    }

    /// manifest_<command>.ini: the resolved config preceded by commented file
    /// records, so that `flipdiff <command> -c manifest_<command>.ini` reruns it.
    std::filesystem::path write_manifest(RunConfig const& cfg)
    {
        std::ostringstream os;
        os << "# flipdiff " << kVersion << " manifest\n# command " << command_ << "\n";
        for (auto const& e : entries_)
            os << "# file " << e.name << " " << e.kind << " bytes " << e.bytes << " fnv1a " << hex64(e.hash) << "\n";
        os << "\n" << cfg.to_ini();
        auto path = dir_ / ("manifest_" + command_ + ".ini");
        std::ofstream f(path, std::ios::binary);
        f << os.str();
        if (!f) throw std::runtime_error("cannot write " + path.string());
        return path;
    }

    std::vector<std::string> files() const
    {
        std::vector<std::string> v;
        for (auto const& e : entries_) v.push_back(e.name);
        return v;
    }

  private:
    struct Entry
    {
        std::string name, kind;
        std::size_t bytes;
        std::uint64_t hash;
    };
    std::filesystem::path dir_;
    std::string command_;
    std::vector<Entry> entries_;
};

//---------------------------------------------------------------------------//
// gnuplot scripts; one page per emitted table.

inline std::string gnuplot_header(std::string const& out)
{
    return "set terminal pngcairo size 900,600\nset datafile separator ','\nset key left top\nset grid\n"
           "set output '" + out + "'\n";
}

/// Column layout: m2 (t, m2, m2_se, ...), cf (t, mode, k0..k{d-1}, re, ...), meanfield (t, x0.., mean, se).
inline std::string plot_simulate(std::string const& m2_csv, std::string const& cf_csv, std::string const& field_csv,
                                 std::vector<int> const& modes, int dim, double t_last)
{
    std::ostringstream os;
    os << gnuplot_header("m2.png") << "set xlabel 't'\nset ylabel 'sum |x|^2 E|psi|^2'\n"
       << "plot '" << m2_csv << "' skip 2 using 1:2:3 with yerrorbars title 'M2'\n\n";
    os << gnuplot_header("cf.png") << "set logscale y\nset xlabel 't'\nset ylabel 'Re CF'\nplot ";
    for (std::size_t i = 0; i < modes.size(); ++i)
        os << (i ? ", " : "") << "'" << cf_csv << "' skip 2 using 1:(($2==" << modes[i] << ")?$" << 3 + dim
           << ":1/0) with linespoints title 'mode " << modes[i] << "'";
    os << "\nunset logscale y\n";
    if (dim == 1)
        os << "\n" << gnuplot_header("field.png") << "set xlabel 'x'\nset ylabel 'E|psi_t(x)|^2'\n"
           << "plot '" << field_csv << "' skip 2 using 2:((abs($1-" << detail::fmt_double(t_last)
           << ")<1e-9)?$3:1/0) with lines title 't = " << detail::fmt_double(t_last) << "'\n";
    return os.str();
}

/// D11 draws the quadratic k.Dk next to E(k) when it is finite.
inline std::string plot_spectral(std::string const& disp_csv, std::string const& gap_csv, double D11)
{
    std::ostringstream os;
    os << gnuplot_header("dispersion.png") << "set xlabel 'k'\nset ylabel 'Re E(k)'\n"
       << "plot '" << disp_csv << "' skip 2 using 1:2 with points title 'E(k)'";
    if (std::isfinite(D11)) os << ", " << detail::fmt_double(D11) << "*x**2 with lines title 'D k^2'";
    os << "\n\n";
    os << gnuplot_header("gap.png") << "set xlabel 'Re z'\nset ylabel 'Im z'\n"
       << "plot '" << gap_csv << "' skip 2 using (($1==0)?$2:1/0):3 with points pt 7 title 'base', "
       << "'' skip 2 using (($1==1)?$2:1/0):3 with points pt 6 title 'doubled'\n";
    return os.str();
}

inline std::string plot_oracle(std::string const& oracle_csv)
{
    std::ostringstream os;
    os << gnuplot_header("oracle.png") << "set xlabel 'x'\nset ylabel 'E rho_t(x,x)'\n"
       << "plot '" << oracle_csv << "' skip 2 using 1:2:3 with yerrorbars title 'Monte Carlo', "
       << "'' skip 2 using 1:4 with points pt 7 title 'dense'\n";
    return os.str();
}

} // namespace flipdiff
