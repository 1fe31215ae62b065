//! Sample log parsing, filtering and per-user partitioning.
//!
//! Two line formats are accepted: JSONL (canonical) and CSV with a fixed
//! header. Malformed lines never abort a parse; each one is reported as a
//! [`Diagnostic`] carrying its line number.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::domain::{BatterySample, Charger, Health, Screen};
use crate::error::{Error, Result};

/// Column order of the CSV format (and key set of the JSONL format).
pub const CSV_HEADER: [&str; 10] = [
    "time",
    "user",
    "model",
    "soc",
    "voltage_mv",
    "temp_c",
    "health",
    "charger",
    "charging",
    "screen",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeUnit {
    #[default]
    #[serde(rename = "s")]
    Seconds,
    #[serde(rename = "ms")]
    Milliseconds,
}

impl TimeUnit {
    fn to_seconds(self, t: f64) -> f64 {
        match self {
            TimeUnit::Seconds => t,
            TimeUnit::Milliseconds => t / 1000.0,
        }
    }
}

impl FromStr for TimeUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "s" => Ok(TimeUnit::Seconds),
            "ms" => Ok(TimeUnit::Milliseconds),
            other => Err(format!("unknown time unit {other:?} (expected s or ms)")),
        }
    }
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseOutput {
    pub samples: Vec<BatterySample>,
    pub rejected: Vec<Diagnostic>,
}

#[derive(Deserialize)]
struct JsonRecord<'a> {
    time: f64,
    #[serde(borrow)]
    user: Cow<'a, str>,
    #[serde(borrow)]
    model: Cow<'a, str>,
    soc: f64,
    voltage_mv: f64,
    temp_c: f64,
    #[serde(borrow)]
    health: Cow<'a, str>,
    #[serde(borrow)]
    charger: Cow<'a, str>,
    charging: bool,
    #[serde(borrow)]
    screen: Cow<'a, str>,
}

/// Converts a raw SOC reading to integer percent.
///
/// Values strictly between 0 and 1 are fractions of full charge; anything
/// else is already a percentage.
pub fn normalize_soc(raw: f64) -> Result<u8, String> {
    if !raw.is_finite() || raw < 0.0 {
        return Err("soc out of range".into());
    }
    let pct = if raw > 0.0 && raw < 1.0 { raw * 100.0 } else { raw };
    let rounded = pct.round();
    if rounded > 100.0 {
        return Err("soc out of range".into());
    }
    Ok(rounded as u8)
}

/// Reuses the previous line's identifier allocation when it repeats.
#[derive(Default)]
struct Interner {
    last_user: Option<Arc<str>>,
    last_model: Option<Arc<str>>,
}

impl Interner {
    fn intern(slot: &mut Option<Arc<str>>, s: &str) -> Arc<str> {
        match slot {
            Some(a) if &**a == s => a.clone(),
            _ => {
                let a: Arc<str> = Arc::from(s);
                *slot = Some(a.clone());
                a
            }
        }
    }

    fn user(&mut self, s: &str) -> Arc<str> {
        Self::intern(&mut self.last_user, s)
    }

    fn model(&mut self, s: &str) -> Arc<str> {
        Self::intern(&mut self.last_model, s)
    }
}

#[allow(clippy::too_many_arguments)]
fn build_sample(
    interner: &mut Interner,
    unit: TimeUnit,
    time: f64,
    user: &str,
    model: &str,
    soc: f64,
    voltage_mv: f64,
    temp_c: f64,
    health: &str,
    charger: &str,
    charging: bool,
    screen: &str,
) -> Result<BatterySample, String> {
    let (user, model) = (user.trim(), model.trim());
    if user.is_empty() {
        return Err("empty user id".into());
    }
    if !voltage_mv.is_finite() {
        return Err("voltage out of range".into());
    }
    let sample = BatterySample {
        timestamp: unit.to_seconds(time),
        user_id: interner.user(user),
        model: interner.model(model),
        soc: normalize_soc(soc)?,
        voltage_mv: voltage_mv.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32,
        temperature_c: temp_c,
        health: health.parse::<Health>().unwrap_or(Health::Other),
        charger: charger.parse::<Charger>()?,
        charging,
        screen: screen.parse::<Screen>()?,
    };
    sample.validate()?;
    Ok(sample)
}

enum Source<R: BufRead> {
    Jsonl { reader: R, buf: String, line: u64 },
    Csv { reader: csv::Reader<R>, record: csv::StringRecord },
}

/// Streaming reader yielding one parsed sample or diagnostic per line.
///
/// The outer `Result` is a fatal stream error; the inner one is a per-line
/// outcome.
pub struct SampleReader<R: BufRead> {
    source: Source<R>,
    unit: TimeUnit,
    interner: Interner,
}

impl<R: BufRead> SampleReader<R> {
    pub fn new(reader: R, format: InputFormat, unit: TimeUnit) -> Result<Self> {
        let source = match format {
            InputFormat::Jsonl => Source::Jsonl {
                reader,
                buf: String::new(),
                line: 0,
            },
            InputFormat::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .from_reader(reader);
                let headers = reader.headers()?.clone();
                let found: Vec<&str> = headers.iter().map(str::trim).collect();
                if found != CSV_HEADER {
                    return Err(Error::CsvHeader {
                        expected: CSV_HEADER.join(","),
                        found: found.join(","),
                    });
                }
                Source::Csv {
                    reader,
                    record: csv::StringRecord::new(),
                }
            }
        };
        Ok(SampleReader {
            source,
            unit,
            interner: Interner::default(),
        })
    }

    fn next_jsonl(
        reader: &mut R,
        buf: &mut String,
        line: &mut u64,
        interner: &mut Interner,
        unit: TimeUnit,
    ) -> Option<Result<Result<BatterySample, Diagnostic>>> {
        loop {
            buf.clear();
            match reader.read_line(buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            *line += 1;
            let text = buf.trim();
            if text.is_empty() {
                continue;
            }
            let outcome = match serde_json::from_str::<JsonRecord<'_>>(text) {
                Ok(r) => build_sample(
                    interner,
                    unit,
                    r.time,
                    &r.user,
                    &r.model,
                    r.soc,
                    r.voltage_mv,
                    r.temp_c,
                    &r.health,
                    &r.charger,
                    r.charging,
                    &r.screen,
                ),
                Err(e) => Err(format!("malformed record: {e}")),
            };
            return Some(Ok(outcome.map_err(|reason| Diagnostic {
                line: *line,
                reason,
            })));
        }
    }

    fn next_csv(
        reader: &mut csv::Reader<R>,
        record: &mut csv::StringRecord,
        interner: &mut Interner,
        unit: TimeUnit,
    ) -> Option<Result<Result<BatterySample, Diagnostic>>> {
        match reader.read_record(record) {
            Ok(false) => None,
            Ok(true) => {
                let line = record.position().map_or(0, |p| p.line());
                Some(Ok(parse_csv_record(record, interner, unit)
                    .map_err(|reason| Diagnostic { line, reason })))
            }
            Err(e) => {
                // Field-level UTF-8 problems are per-line; anything else is fatal.
                if let csv::ErrorKind::Utf8 { pos, .. } = e.kind() {
                    let line = pos.as_ref().map_or(0, |p| p.line());
                    return Some(Ok(Err(Diagnostic {
                        line,
                        reason: "invalid utf-8".into(),
                    })));
                }
                Some(Err(e.into()))
            }
        }
    }
}

fn parse_csv_record(
    record: &csv::StringRecord,
    interner: &mut Interner,
    unit: TimeUnit,
) -> Result<BatterySample, String> {
    if record.len() != CSV_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            CSV_HEADER.len(),
            record.len()
        ));
    }
    let num = |i: usize| -> Result<f64, String> {
        let raw = record[i].trim();
        raw.parse::<f64>()
            .map_err(|_| format!("field {} is not a number: {raw:?}", CSV_HEADER[i]))
    };
    let charging = match record[8].trim().to_ascii_lowercase().as_str() {
        "true" | "1" => true,
        "false" | "0" => false,
        other => return Err(format!("field charging is not a boolean: {other:?}")),
    };
    build_sample(
        interner,
        unit,
        num(0)?,
        &record[1],
        &record[2],
        num(3)?,
        num(4)?,
        num(5)?,
        &record[6],
        &record[7],
        charging,
        &record[9],
    )
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = Result<Result<BatterySample, Diagnostic>>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.source {
            Source::Jsonl { reader, buf, line } => {
                Self::next_jsonl(reader, buf, line, &mut self.interner, self.unit)
            }
            Source::Csv { reader, record } => {
                Self::next_csv(reader, record, &mut self.interner, self.unit)
            }
        }
    }
}

/// Parses a whole stream into samples plus per-line diagnostics.
pub fn parse_samples<R: Read>(
    input: R,
    format: InputFormat,
    unit: TimeUnit,
) -> Result<ParseOutput> {
    let reader = SampleReader::new(std::io::BufReader::new(input), format, unit)?;
    let mut out = ParseOutput::default();
    for item in reader {
        match item? {
            Ok(s) => out.samples.push(s),
            Err(d) => out.rejected.push(d),
        }
    }
    Ok(out)
}

/// Writes samples in the given format; the output parses back to the same
/// samples.
pub fn write_samples<'a, W, I>(writer: W, format: InputFormat, samples: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a BatterySample>,
{
    match format {
        InputFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(writer);
            for s in samples {
                serde_json::to_writer(&mut w, s)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        InputFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(CSV_HEADER)?;
            for s in samples {
                w.write_record([
                    format_f64(s.timestamp),
                    s.user_id.to_string(),
                    s.model.to_string(),
                    s.soc.to_string(),
                    s.voltage_mv.to_string(),
                    format_f64(s.temperature_c),
                    s.health.to_string(),
                    s.charger.to_string(),
                    s.charging.to_string(),
                    s.screen.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Shortest representation that parses back to the same value.
pub(crate) fn format_f64(v: f64) -> String {
    let s = format!("{v}");
    if s.contains(['.', 'e', 'E', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

/// Sample predicate; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterCriteria {
    pub charger: Option<Charger>,
    pub screen: Option<Screen>,
    pub health: Option<BTreeSet<Health>>,
    pub model: Option<String>,
}

impl FilterCriteria {
    /// AC charging, screen off, good health.
    pub fn analysis_default() -> Self {
        FilterCriteria {
            charger: Some(Charger::Ac),
            screen: Some(Screen::Off),
            health: Some(BTreeSet::from([Health::Good])),
            model: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.charger.is_none()
            && self.screen.is_none()
            && self.health.is_none()
            && self.model.is_none()
    }

    pub fn matches(&self, s: &BatterySample) -> bool {
        self.charger.is_none_or(|c| s.charger == c)
            && self.screen.is_none_or(|sc| s.screen == sc)
            && self.health.as_ref().is_none_or(|h| h.contains(&s.health))
            && self.model.as_deref().is_none_or(|m| &*s.model == m)
    }
}

/// Keeps the samples matching `criteria`, preserving order.
pub fn filter_samples(samples: Vec<BatterySample>, criteria: &FilterCriteria) -> Vec<BatterySample> {
    if criteria.is_empty() {
        return samples;
    }
    samples.into_iter().filter(|s| criteria.matches(s)).collect()
}

/// Stable time sort followed by removal of repeated (timestamp, soc) pairs.
///
/// All samples are expected to belong to one user.
pub fn sort_and_dedup(mut samples: Vec<BatterySample>) -> Vec<BatterySample> {
    samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let mut out: Vec<BatterySample> = Vec::with_capacity(samples.len());
    let mut group_start = 0;
    for s in samples {
        if out
            .last()
            .is_some_and(|last| last.timestamp.total_cmp(&s.timestamp).is_ne())
        {
            group_start = out.len();
        }
        if out[group_start..].iter().any(|o| o.soc == s.soc) {
            continue;
        }
        out.push(s);
    }
    out
}

/// Partitions samples by user in first-appearance order; each partition is
/// time sorted and deduplicated.
pub fn group_by_user(samples: Vec<BatterySample>) -> IndexMap<Arc<str>, Vec<BatterySample>> {
    let mut groups: IndexMap<Arc<str>, Vec<BatterySample>> = IndexMap::new();
    for s in samples {
        groups.entry(s.user_id.clone()).or_default().push(s);
    }
    for v in groups.values_mut() {
        *v = sort_and_dedup(std::mem::take(v));
    }
    groups
}

/// Splits a user-contiguous sample stream into per-user partitions without
/// buffering more than one user at a time.
///
/// Yields an error item if a user reappears after its partition was closed.
pub struct ContiguousPartitions<I> {
    inner: I,
    pending: Option<BatterySample>,
    seen: HashSet<Arc<str>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonContiguousUser(pub Arc<str>);

impl<I: Iterator<Item = BatterySample>> ContiguousPartitions<I> {
    pub fn new(inner: I) -> Self {
        ContiguousPartitions {
            inner,
            pending: None,
            seen: HashSet::new(),
        }
    }
}

impl<I: Iterator<Item = BatterySample>> Iterator for ContiguousPartitions<I> {
    type Item = Result<(Arc<str>, Vec<BatterySample>), NonContiguousUser>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = self.pending.take().or_else(|| self.inner.next())?;
        let user = first.user_id.clone();
        if !self.seen.insert(user.clone()) {
            return Some(Err(NonContiguousUser(user)));
        }
        let mut batch = vec![first];
        for s in self.inner.by_ref() {
            if s.user_id != user {
                self.pending = Some(s);
                break;
            }
            batch.push(s);
        }
        Some(Ok((user, sort_and_dedup(batch))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(user: &str, t: f64, soc: &str, v: &str) -> String {
        format!(
            r#"{{"time":{t},"user":"{user}","model":"m","soc":{soc},"voltage_mv":{v},"temp_c":29,"health":"good","charger":"ac","charging":true,"screen":"off"}}"#
        )
    }

    fn parse(text: &str) -> ParseOutput {
        parse_samples(text.as_bytes(), InputFormat::Jsonl, TimeUnit::Seconds).unwrap()
    }

    #[test]
    fn fractional_soc_is_scaled() {
        let out = parse(&line("a", 1.0, "0.99", "4200"));
        assert_eq!(out.samples[0].soc, 99);
    }

    #[test]
    fn percent_soc_is_kept() {
        let out = parse(&line("a", 1.0, "100", "4200"));
        assert_eq!(out.samples[0].soc, 100);
        let out = parse(&line("a", 1.0, "1", "4200"));
        assert_eq!(out.samples[0].soc, 1);
    }

    #[test]
    fn out_of_range_voltage_is_rejected_with_line_number() {
        let text = format!("{}\n{}\n", line("a", 1.0, "50", "4000"), line("a", 2.0, "51", "9999"));
        let out = parse(&text);
        assert_eq!(out.samples.len(), 1);
        assert_eq!(
            out.rejected,
            vec![Diagnostic {
                line: 2,
                reason: "voltage out of range".into()
            }]
        );
    }

    #[test]
    fn malformed_lines_are_reported_not_dropped() {
        let text = format!("not json\n\n{}\n{{\"time\":1}}\n", line("a", 1.0, "50", "4000"));
        let out = parse(&text);
        assert_eq!(out.samples.len(), 1);
        let lines: Vec<u64> = out.rejected.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 4]);
    }

    #[test]
    fn millisecond_timestamps() {
        let out = parse_samples(
            line("a", 1500.0, "50", "4000").as_bytes(),
            InputFormat::Jsonl,
            TimeUnit::Milliseconds,
        )
        .unwrap();
        assert_eq!(out.samples[0].timestamp, 1.5);
    }

    #[test]
    fn csv_header_is_enforced() {
        let err = parse_samples(
            "time,user\n1,a\n".as_bytes(),
            InputFormat::Csv,
            TimeUnit::Seconds,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CsvHeader { .. }));
    }

    #[test]
    fn csv_rows_parse() {
        let text = "time,user,model,soc,voltage_mv,temp_c,health,charger,charging,screen\n\
                    10,a,m,0.5,3900,30.5,over voltage,usb,true,on\n\
                    11,a,m,51,3900,30.5,good,usb,maybe,on\n";
        let out = parse_samples(text.as_bytes(), InputFormat::Csv, TimeUnit::Seconds).unwrap();
        assert_eq!(out.samples.len(), 1);
        assert_eq!(out.samples[0].soc, 50);
        assert_eq!(out.samples[0].health, Health::OverVoltage);
        assert_eq!(out.rejected[0].line, 3);
    }

    fn mk(user: &str, t: f64, soc: u8, charger: Charger, screen: Screen, health: Health) -> BatterySample {
        BatterySample {
            timestamp: t,
            user_id: user.into(),
            model: "m".into(),
            soc,
            voltage_mv: 4000,
            temperature_c: 30.0,
            health,
            charger,
            charging: charger != Charger::Unplugged,
            screen,
        }
    }

    #[test]
    fn filter_ac_screen_off() {
        let input = vec![
            mk("a", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("a", 2.0, 2, Charger::Usb, Screen::Off, Health::Good),
            mk("a", 3.0, 3, Charger::Ac, Screen::On, Health::Good),
            mk("a", 4.0, 4, Charger::Ac, Screen::Off, Health::Good),
        ];
        let criteria = FilterCriteria {
            charger: Some(Charger::Ac),
            screen: Some(Screen::Off),
            ..Default::default()
        };
        let out = filter_samples(input.clone(), &criteria);
        let socs: Vec<u8> = out.iter().map(|s| s.soc).collect();
        assert_eq!(socs, vec![1, 4]);
        assert_eq!(filter_samples(input.clone(), &FilterCriteria::default()), input);
    }

    #[test]
    fn filter_health() {
        let input = vec![
            mk("a", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("a", 2.0, 2, Charger::Ac, Screen::Off, Health::OverVoltage),
        ];
        let criteria = FilterCriteria {
            health: Some(BTreeSet::from([Health::Good])),
            ..Default::default()
        };
        assert_eq!(filter_samples(input, &criteria).len(), 1);
    }

    #[test]
    fn grouping_sorts_each_user() {
        let input = vec![
            mk("a", 3.0, 3, Charger::Ac, Screen::Off, Health::Good),
            mk("b", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("a", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("b", 0.5, 0, Charger::Ac, Screen::Off, Health::Good),
            mk("a", 2.0, 2, Charger::Ac, Screen::Off, Health::Good),
        ];
        let groups = group_by_user(input);
        let keys: Vec<&str> = groups.keys().map(|k| &**k).collect();
        assert_eq!(keys, vec!["a", "b"]);
        let a: Vec<f64> = groups["a"].iter().map(|s| s.timestamp).collect();
        assert_eq!(a, vec![1.0, 2.0, 3.0]);
        let b: Vec<f64> = groups["b"].iter().map(|s| s.timestamp).collect();
        assert_eq!(b, vec![0.5, 1.0]);
    }

    #[test]
    fn exact_duplicates_collapse() {
        let s = mk("a", 1.0, 1, Charger::Ac, Screen::Off, Health::Good);
        let groups = group_by_user(vec![s.clone(), s.clone(), s]);
        assert_eq!(groups["a"].len(), 1);
    }

    #[test]
    fn contiguous_partitions_detect_reappearance() {
        let input = vec![
            mk("a", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("b", 1.0, 1, Charger::Ac, Screen::Off, Health::Good),
            mk("a", 2.0, 2, Charger::Ac, Screen::Off, Health::Good),
        ];
        let parts: Vec<_> = ContiguousPartitions::new(input.into_iter()).collect();
        assert!(parts[0].is_ok());
        assert!(parts[1].is_ok());
        assert_eq!(parts[2], Err(NonContiguousUser("a".into())));
    }
}
