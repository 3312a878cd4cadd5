use crate::engine::PrefixTimeline;
use crate::{Error, Result};

fn final_row(rows: &[Vec<usize>]) -> Result<&[usize]> {
    rows.last()
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Empty("timeline has no rows".into()))
}

/// Label substitutions between consecutive rows, over positions present in both.
pub fn substitutions(rows: &[Vec<usize>]) -> usize {
    rows.windows(2)
        .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| a != b).count())
        .sum()
}

/// `S / (n + S)`: `n` necessary additions (one per final label) against
/// `S` substitutions.
pub fn edit_overhead(rows: &[Vec<usize>]) -> Result<f64> {
    let n = final_row(rows)?.len();
    let s = substitutions(rows);
    Ok(if n + s == 0 { 0.0 } else { s as f64 / (n + s) as f64 })
}

/// Mean over tokens of `(FC − FD) / (T − FD)`, where `FD` is the step that
/// first shows the token's label, `FC` the step from which it never changes
/// again and `T` the last step. Tokens first shown at the last step add 0.
pub fn correction_time(rows: &[Vec<usize>]) -> Result<f64> {
    let fin = final_row(rows)?;
    if fin.is_empty() {
        return Ok(0.0);
    }
    let last = rows.len();
    let mut total = 0.0;
    for (i, &label) in fin.iter().enumerate() {
        let fd = rows.iter().position(|r| r.len() > i).map_or(last, |p| p + 1);
        // earliest step s such that every row from s on shows the final label
        let mut fc = last;
        for s in (fd..=last).rev() {
            if rows[s - 1].get(i) == Some(&label) {
                fc = s;
            } else {
                break;
            }
        }
        if last > fd {
            total += (fc - fd) as f64 / (last - fd) as f64;
        }
    }
    Ok(total / fin.len() as f64)
}

/// Share of non-empty rows that are prefixes of the final row. Rows left
/// empty by an output delay carry no hypothesis and are not counted.
pub fn relative_correctness(rows: &[Vec<usize>]) -> Result<f64> {
    let fin = final_row(rows)?;
    let shown: Vec<&Vec<usize>> = rows.iter().filter(|r| !r.is_empty()).collect();
    if shown.is_empty() {
        return Ok(1.0);
    }
    let ok = shown.iter().filter(|r| fin.starts_with(r)).count();
    Ok(ok as f64 / shown.len() as f64)
}

/// The timeline a reader would see if each label were displayed `d` steps
/// after its token: row `t` (for `t = 1..T+d`) is
/// `row_min(t,T)[..max(0, t − d)]`.
pub fn delayed_view(rows: &[Vec<usize>], d: usize) -> Vec<Vec<usize>> {
    let t_max = rows.len();
    (1..=t_max + d)
        .map(|t| {
            let row = &rows[t.min(t_max) - 1];
            row[..t.saturating_sub(d).min(row.len())].to_vec()
        })
        .collect()
}

/// EO, CT and RC of one timeline.
pub fn incremental_scores(tl: &PrefixTimeline) -> Result<(f64, f64, f64)> {
    Ok((
        edit_overhead(&tl.rows)?,
        correction_time(&tl.rows)?,
        relative_correctness(&tl.rows)?,
    ))
}
