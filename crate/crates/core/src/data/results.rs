use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fault::{BerSweepResult, SweepRow};
use crate::network::EpochStats;

/// Decimal rendering with `digits` significant digits and no trailing zeros.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        return format!("{:.*e}", digits.saturating_sub(1), v);
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub const SWEEP_HEADER: [&str; 4] = ["ber", "trial", "accuracy", "mean_margin"];
pub const TRAIN_LOG_HEADER: [&str; 5] = ["epoch", "loss", "accuracy", "mlm", "lr"];

pub fn write_sweep_csv(result: &BerSweepResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in &result.rows {
        w.write_record([
            format_sig(r.ber, 6),
            r.trial.to_string(),
            format_sig(r.accuracy, 6),
            format_sig(r.mean_margin, 6),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_train_log_csv(log: &[EpochStats], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAIN_LOG_HEADER)?;
    for s in log {
        w.write_record([
            s.epoch.to_string(),
            format_sig(s.loss, 6),
            format_sig(s.accuracy, 6),
            format_sig(s.mlm, 6),
            format_sig(s.lr, 6),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, path: &Path) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Config(format!("unparsable field in {}", path.display())))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(SweepRow {
            ber: parse(rec.get(0), path)?,
            trial: parse(rec.get(1), path)?,
            accuracy: parse(rec.get(2), path)?,
            mean_margin: parse(rec.get(3), path)?,
        });
    }
    Ok(rows)
}

pub fn read_train_log_csv(path: &Path) -> Result<Vec<EpochStats>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(EpochStats {
            epoch: parse(rec.get(0), path)?,
            loss: parse(rec.get(1), path)?,
            accuracy: parse(rec.get(2), path)?,
            mlm: parse(rec.get(3), path)?,
            lr: parse(rec.get(4), path)?,
        });
    }
    Ok(rows)
}

/// Writes a matplotlib script plotting mean accuracy over BER, one curve per
/// sweep CSV (labelled by file stem). Paths are embedded exactly as given.
pub fn emit_plot_script(csv_paths: &[&Path], output: &Path) -> Result<String> {
    if csv_paths.is_empty() {
        return Err(Error::Config("no sweep CSVs given".into()));
    }
    for p in csv_paths {
        if !p.exists() {
            return Err(Error::MissingFile(p.display().to_string()));
        }
    }
    let mut s = String::from(
        "import csv\n\
         from collections import defaultdict\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\
         \n\
         def mean_curve(path):\n\
         \x20   acc = defaultdict(list)\n\
         \x20   with open(path, newline=\"\") as f:\n\
         \x20       for row in csv.DictReader(f):\n\
         \x20           acc[float(row[\"ber\"])].append(float(row[\"accuracy\"]))\n\
         \x20   bers = sorted(b for b in acc if b > 0)\n\
         \x20   return bers, [sum(acc[b]) / len(acc[b]) for b in bers]\n\
         \n\
         fig, ax = plt.subplots()\n",
    );
    for p in csv_paths {
        let label = p
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sweep".into());
        s.push_str(&format!(
            "bers, accs = mean_curve({path:?})\nax.plot(bers, accs, marker=\"o\", label={label:?})\n",
            path = p.display().to_string(),
        ));
    }
    s.push_str(&format!(
        "ax.set_xscale(\"log\")\n\
         ax.set_xlabel(\"bit error rate\")\n\
         ax.set_ylabel(\"mean accuracy\")\n\
         ax.legend()\n\
         fig.savefig({png:?}, dpi=150)\n",
        png = output.with_extension("png").display().to_string(),
    ));
    fs::write(output, &s)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(0.1, 6), "0.1");
        assert_eq!(format_sig(1.0 / 3.0, 6), "0.333333");
        assert_eq!(format_sig(123456.789, 6), "123457");
        assert_eq!(format_sig(-2.5e-4, 6), "-0.00025");
        assert_eq!(format_sig(1.0e-9, 6), "1.00000e-9");
        assert_eq!(format_sig(0.0025, 6), "0.0025");
        assert_eq!(format_sig(192.34567, 6), "192.346");
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let r = BerSweepResult {
            rows: vec![],
            master_seed: 0,
            architecture: "mlp:2-2".into(),
        };
        write_sweep_csv(&r, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "ber,trial,accuracy,mean_margin\n");
    }

    #[test]
    fn sweep_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows: Vec<SweepRow> = [0.0, 0.01]
            .iter()
            .flat_map(|&ber| {
                (0..2).map(move |trial| SweepRow {
                    ber,
                    trial,
                    accuracy: 0.8125 - ber * trial as f64,
                    mean_margin: 1.0 / 3.0 + trial as f64,
                })
            })
            .collect();
        let r = BerSweepResult {
            rows: rows.clone(),
            master_seed: 3,
            architecture: "mlp:2-2".into(),
        };
        write_sweep_csv(&r, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let back = read_sweep_csv(&p).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!((a.ber, a.trial, a.accuracy), (b.ber, b.trial, b.accuracy));
            assert!((a.mean_margin - b.mean_margin).abs() <= 5e-6 * a.mean_margin.abs());
        }
        // a second round trip is exact
        let again = dir.path().join("t.csv");
        write_sweep_csv(&BerSweepResult { rows: back.clone(), ..r }, &again).unwrap();
        assert_eq!(fs::read_to_string(&again).unwrap(), text);
    }

    #[test]
    fn train_log_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = vec![EpochStats {
            epoch: 0,
            loss: 0.5,
            accuracy: 0.75,
            mlm: 2.25,
            lr: 1e-3,
        }];
        write_train_log_csv(&log, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "epoch,loss,accuracy,mlm,lr\n0,0.5,0.75,2.25,0.001\n"
        );
        assert_eq!(read_train_log_csv(&p).unwrap(), log);
    }

    #[test]
    fn plot_script_lists_given_paths() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("cel.csv");
        fs::write(&a, "ber,trial,accuracy,mean_margin\n").unwrap();
        let out = dir.path().join("plot.py");
        let s = emit_plot_script(&[a.as_path()], &out).unwrap();
        assert_eq!(s.matches("ax.plot(").count(), 1);
        assert!(s.contains("label=\"cel\""));
        assert!(emit_plot_script(&[dir.path().join("nope.csv").as_path()], &out).is_err());
    }
}
