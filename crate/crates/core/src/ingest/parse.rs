//! Footprint dataset readers and writers (GeoJSON and CSV with WKT geometry).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::record::{FootprintRecord, UseClass};
use crate::error::{MarlError, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Geojson,
    Csv,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "geojson" || e == "json" => Ok(DatasetFormat::Geojson),
            Some(e) if e == "csv" => Ok(DatasetFormat::Csv),
            _ => Err(MarlError::Config(format!(
                "cannot infer dataset format from {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDataset {
    pub records: Vec<FootprintRecord>,
    /// Features dropped for missing properties or invalid geometry.
    pub skipped: usize,
}

pub fn parse_footprint_dataset(path: &Path, format: DatasetFormat) -> Result<ParsedDataset> {
    let text = fs::read_to_string(path).map_err(|e| MarlError::io(path, e))?;
    match format {
        DatasetFormat::Geojson => parse_geojson_str(&text),
        DatasetFormat::Csv => parse_csv_str(&text),
    }
}

pub fn parse_geojson_str(text: &str) -> Result<ParsedDataset> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| MarlError::Parse(format!("geojson: {e}")))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(MarlError::Parse("expected a GeoJSON FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| MarlError::Parse("FeatureCollection without features array".into()))?;

    let mut records = Vec::with_capacity(features.len());
    let mut skipped = 0;
    for feature in features {
        match feature_to_record(feature) {
            Some(r) if r.validate().is_ok() => records.push(r),
            _ => skipped += 1,
        }
    }
    Ok(ParsedDataset { records, skipped })
}

fn feature_to_record(feature: &Value) -> Option<FootprintRecord> {
    let geometry = feature.get("geometry")?;
    if geometry.get("type")?.as_str()? != "Polygon" {
        return None;
    }
    let outer = geometry.get("coordinates")?.as_array()?.first()?.as_array()?;
    let mut ring = Vec::with_capacity(outer.len());
    for vertex in outer {
        let xy = vertex.as_array()?;
        ring.push((xy.first()?.as_f64()?, xy.get(1)?.as_f64()?));
    }
    let ring = open_ring(ring);

    let props = feature.get("properties")?;
    Some(FootprintRecord {
        id: props.get("id")?.as_str()?.to_string(),
        polygon: ring,
        height_m: props.get("height_m")?.as_f64()?,
        area_m2: props.get("area_m2")?.as_f64()?,
        program: props.get("program")?.as_str()?.to_string(),
        vintage_year: i32::try_from(props.get("vintage_year")?.as_i64()?).ok()?,
        use_class: props.get("use_class")?.as_str()?.parse().ok()?,
    })
}

/// Drops a repeated closing vertex.
fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

pub fn to_geojson(records: &[FootprintRecord]) -> Value {
    let features: Vec<Value> = records
        .iter()
        .map(|r| {
            let mut ring: Vec<Value> = r.polygon.iter().map(|&(x, y)| json!([x, y])).collect();
            if let Some(&(x, y)) = r.polygon.first() {
                ring.push(json!([x, y]));
            }
            let mut props = Map::new();
            props.insert("id".into(), json!(r.id));
            props.insert("height_m".into(), json!(r.height_m));
            props.insert("area_m2".into(), json!(r.area_m2));
            props.insert("program".into(), json!(r.program));
            props.insert("vintage_year".into(), json!(r.vintage_year));
            props.insert("use_class".into(), json!(r.use_class.as_str()));
            json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": props,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub fn write_geojson_string(records: &[FootprintRecord]) -> String {
    let mut s = serde_json::to_string_pretty(&to_geojson(records)).expect("geojson serializes");
    s.push('\n');
    s
}

const CSV_COLUMNS: [&str; 7] = [
    "id",
    "geometry",
    "height_m",
    "area_m2",
    "program",
    "vintage_year",
    "use_class",
];

pub fn parse_csv_str(text: &str) -> Result<ParsedDataset> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| MarlError::Parse(format!("csv header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let idx: Vec<Option<usize>> = CSV_COLUMNS.iter().map(|c| col(c)).collect();
    if idx.iter().any(Option::is_none) {
        return Err(MarlError::Parse(format!(
            "csv must have columns {}",
            CSV_COLUMNS.join(",")
        )));
    }
    let idx: Vec<usize> = idx.into_iter().flatten().collect();

    let mut records = Vec::new();
    let mut skipped = 0;
    for row in reader.records() {
        let row = row.map_err(|e| MarlError::Parse(format!("csv row: {e}")))?;
        let field = |i: usize| row.get(idx[i]).map(str::trim).filter(|s| !s.is_empty());
        let parsed = (|| {
            Some(FootprintRecord {
                id: field(0)?.to_string(),
                polygon: parse_wkt_polygon(field(1)?)?,
                height_m: field(2)?.parse().ok()?,
                area_m2: field(3)?.parse().ok()?,
                program: field(4)?.to_string(),
                vintage_year: field(5)?.parse().ok()?,
                use_class: field(6)?.parse::<UseClass>().ok()?,
            })
        })();
        match parsed {
            Some(r) if r.validate().is_ok() => records.push(r),
            _ => skipped += 1,
        }
    }
    Ok(ParsedDataset { records, skipped })
}

/// Parses the outer ring of a WKT `POLYGON ((x y, ...), ...)`.
pub fn parse_wkt_polygon(wkt: &str) -> Option<Vec<Point>> {
    let rest = wkt.trim();
    let head = rest.get(..7)?;
    if !head.eq_ignore_ascii_case("POLYGON") {
        return None;
    }
    let rest = rest[7..].trim_start();
    let rest = rest.strip_prefix('(')?.trim_start().strip_prefix('(')?;
    let ring_text = &rest[..rest.find(')')?];
    let mut ring = Vec::new();
    for pair in ring_text.split(',') {
        let mut nums = pair.split_whitespace();
        let x = nums.next()?.parse().ok()?;
        let y = nums.next()?.parse().ok()?;
        ring.push((x, y));
    }
    Some(open_ring(ring))
}

pub fn to_wkt_polygon(ring: &[Point]) -> String {
    let mut parts: Vec<String> = ring.iter().map(|(x, y)| format!("{x} {y}")).collect();
    if let Some((x, y)) = ring.first() {
        parts.push(format!("{x} {y}"));
    }
    format!("POLYGON (({}))", parts.join(", "))
}

pub fn write_csv_string(records: &[FootprintRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| MarlError::Parse(format!("csv write: {e}"));
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for r in records {
        w.write_record([
            r.id.clone(),
            to_wkt_polygon(&r.polygon),
            r.height_m.to_string(),
            r.area_m2.to_string(),
            r.program.clone(),
            r.vintage_year.to_string(),
            r.use_class.as_str().to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| MarlError::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MarlError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::record::test_record;

    const FOUR_FEATURES: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[10,0],[10,10],[0,10],[0,0]]]},
         "properties": {"id": "a", "height_m": 6.0, "area_m2": 100.0, "program": "Apartments", "vintage_year": 1975, "use_class": "MFH"}},
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[8,0],[8,8],[0,8],[0,0]]]},
         "properties": {"id": "b", "height_m": 4.0, "area_m2": 64.0, "program": "Single Family Residence", "vintage_year": 2001, "use_class": "SFH"}},
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[8,0],[8,8],[0,8],[0,0]]]},
         "properties": {"id": "c", "area_m2": 64.0, "program": "Single Family Residence", "vintage_year": 2001, "use_class": "SFH"}},
        {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [[[0,0],[9,0],[9,9],[0,9]]]},
         "properties": {"id": "d", "height_m": 12.0, "area_m2": 81.0, "program": "Commercial", "vintage_year": 2015, "use_class": "OTHER"}}
      ]
    }"#;

    #[test]
    fn missing_height_is_skipped() {
        let parsed = parse_geojson_str(FOUR_FEATURES).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert_eq!(parsed.skipped, 1);
        assert_eq!(parsed.records[0].polygon.len(), 4);
        assert_eq!(parsed.records[2].polygon.len(), 4);
    }

    #[test]
    fn empty_collection() {
        let parsed = parse_geojson_str(r#"{"type":"FeatureCollection","features":[]}"#).unwrap();
        assert_eq!(parsed, ParsedDataset { records: vec![], skipped: 0 });
    }

    #[test]
    fn malformed_geometry_is_record_level() {
        let text = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","geometry":{"type":"Polygon","coordinates":[[[0,0],[1,1],[2,2],[0,0]]]},
           "properties":{"id":"z","height_m":3,"area_m2":1,"program":"x","vintage_year":1990,"use_class":"SFH"}},
          {"type":"Feature","geometry":{"type":"Point","coordinates":[0,0]},
           "properties":{"id":"p","height_m":3,"area_m2":1,"program":"x","vintage_year":1990,"use_class":"SFH"}}]}"#;
        let parsed = parse_geojson_str(text).unwrap();
        assert_eq!(parsed.records.len(), 0);
        assert_eq!(parsed.skipped, 2);
        assert!(parse_geojson_str("[1,2]").is_err());
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = parse_footprint_dataset(Path::new("/nonexistent/x.geojson"), DatasetFormat::Geojson);
        assert!(matches!(err, Err(MarlError::Io { .. })));
    }

    #[test]
    fn csv_wkt_round_trip() {
        let recs = vec![test_record("a", UseClass::Sfh), test_record("b", UseClass::Other)];
        let text = write_csv_string(&recs).unwrap();
        let parsed = parse_csv_str(&text).unwrap();
        assert_eq!(parsed.records, recs);
        assert_eq!(parsed.skipped, 0);
    }

    #[test]
    fn wkt_takes_outer_ring() {
        let ring = parse_wkt_polygon("POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0), (1 1, 2 1, 2 2, 1 1))").unwrap();
        assert_eq!(ring, vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]);
        assert!(parse_wkt_polygon("LINESTRING (0 0, 1 1)").is_none());
    }
}
