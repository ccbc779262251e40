use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use super::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LossBin {
    /// masked - true
    pub loss: i64,
    pub n: u64,
    /// Share of cells in hundredths of a percent, rounded half up.
    pub perc_hundredths: u64,
}

/// Histogram of `masked - true` over the cells of a release.
///
/// This carries information about true counts and is meant for the data
/// holder, not for publication next to the masked table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InfoLossSummary {
    pub bins: Vec<LossBin>,
    pub total: u64,
}

impl InfoLossSummary {
    pub fn from_losses(losses: impl IntoIterator<Item = i64>) -> Self {
        let mut hist: BTreeMap<i64, u64> = BTreeMap::new();
        for l in losses {
            *hist.entry(l).or_default() += 1;
        }
        let total: u64 = hist.values().sum();
        let bins = hist
            .into_iter()
            .map(|(loss, n)| LossBin {
                loss,
                n,
                // round(n / total * 10000), half up, in integers
                perc_hundredths: (2 * n * 10_000 + total) / (2 * total),
            })
            .collect();
        InfoLossSummary { bins, total }
    }

    pub fn min_loss(&self) -> Option<i64> {
        self.bins.first().map(|b| b.loss)
    }

    pub fn max_loss(&self) -> Option<i64> {
        self.bins.last().map(|b| b.loss)
    }

    /// `Loss,n,perc` rows then a `Total` row whose percentage is always 100.00.
    pub fn write_csv<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut out = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        out.write_record(["Loss", "n", "perc"])?;
        for b in &self.bins {
            out.write_record([b.loss.to_string(), b.n.to_string(), fmt_perc(b.perc_hundredths)])?;
        }
        out.write_record(["Total".to_string(), self.total.to_string(), "100.00".to_string()])?;
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn fmt_perc(hundredths: u64) -> String {
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

impl fmt::Display for InfoLossSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>7} {:>8} {:>7}", "Loss", "n", "perc")?;
        for b in &self.bins {
            writeln!(f, "{:>7} {:>8} {:>7}", b.loss, b.n, fmt_perc(b.perc_hundredths))?;
        }
        write!(f, "{:>7} {:>8} {:>7}", "Total", self.total, "100.00")
    }
}
