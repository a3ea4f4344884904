//! Fit `score = a + b·ln(tokens)` on early checkpoints and extrapolate.

use corpus_curate::report::{extrapolate, fit_log_curve, MetricSeries};

fn main() -> corpus_curate::Result<()> {
    let series = MetricSeries::from_csv(
        "tokens,score\n\
         1e9,31.2\n2e9,33.9\n4e9,36.1\n8e9,38.8\n\
         16e9,41.0\n32e9,43.7\n64e9,46.2\n128e9,48.5\n",
    )?;
    let (early, late) = series.split_at(series.len() / 2);
    let fit = fit_log_curve(early)?;
    println!("a={:.3} b={:.3} rss={:.4}", fit.a, fit.b, fit.rss);
    for &(x, y) in late {
        println!(
            "{x:>8.0e}: predicted {:.2}, observed {y:.2}",
            extrapolate(&fit, x)?
        );
    }
    Ok(())
}
