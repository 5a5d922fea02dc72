//! Seeded synthetic data shaped like a forensic drug-sample base.
//!
//! The generator writes one CSV table per class, an ingest mapping per table
//! and a manifest tying them together. Proportions follow a desk-scale
//! laboratory base: for every 20,000 samples there are about 68,700
//! instances in total. Samples come from production lots, so lot-mates have
//! near-identical dimensions. Some cells are missing or malformed on purpose.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::Datatype;
use crate::ingest::{ColumnBinding, IngestMapping, Manifest, ManifestTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableSummary {
    pub class: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub samples: usize,
    pub seed: u64,
    pub instances: usize,
    pub tables: Vec<TableSummary>,
    pub manifest: PathBuf,
}

/// Rows per 20,000 samples.
const PER_20K: [(&str, usize); 15] = [
    ("Location", 500),
    ("Department", 40),
    ("Laboratory", 6),
    ("Expert", 60),
    ("Investigation", 1_200),
    ("Seizure", 3_500),
    ("Packaging", 2_000),
    ("Sealed", 9_000),
    ("Logo", 300),
    ("Shape", 40),
    ("ExternalAspect", 12_000),
    ("ActivePrinciple", 30),
    ("CuttingProduct", 60),
    ("ChemicalProfile", 6_000),
    ("Analysis", 14_000),
];

fn scaled(samples: usize, class: &str) -> usize {
    let base = PER_20K.iter().find(|(c, _)| *c == class).map_or(0, |(_, n)| *n);
    (base * samples).div_ceil(20_000).max(1)
}

struct Table {
    class: &'static str,
    file: &'static str,
    header: Vec<&'static str>,
    mapping: IndexMap<String, ColumnBinding>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(class: &'static str, file: &'static str) -> Self {
        Self {
            class,
            file,
            header: vec!["id"],
            mapping: IndexMap::new(),
            rows: Vec::new(),
        }
    }

    fn data(mut self, column: &'static str, property: &str, datatype: Datatype) -> Self {
        self.header.push(column);
        self.mapping.insert(
            column.into(),
            ColumnBinding::Data {
                property: property.into(),
                datatype,
            },
        );
        self
    }

    fn link(mut self, column: &'static str, property: &str, target: &str) -> Self {
        self.header.push(column);
        self.mapping.insert(
            column.into(),
            ColumnBinding::Link {
                link: true,
                property: property.into(),
                target_class: target.into(),
            },
        );
        self
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, dir: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(dir.join(self.file)).map_err(io::Error::other)?;
        w.write_record(&self.header).map_err(io::Error::other)?;
        for r in &self.rows {
            w.write_record(r).map_err(io::Error::other)?;
        }
        w.flush()?;
        let mapping = IngestMapping {
            class: self.class.into(),
            id_column: "id".into(),
            columns: self.mapping.clone(),
        };
        let text = serde_json::to_string_pretty(&mapping).map_err(io::Error::other)?;
        fs::write(dir.join(mapping_file(self.file)), text)
    }
}

fn mapping_file(csv: &str) -> String {
    format!("{}.mapping.json", csv.trim_end_matches(".csv"))
}

fn id(prefix: &str, i: usize) -> String {
    format!("{prefix}-{i:05}")
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    fn pick<'a>(&mut self, items: &'a [&'a str]) -> &'a str {
        items.choose(&mut self.rng).expect("non-empty")
    }

    fn opt(&mut self, p_present: f64, value: impl FnOnce(&mut Self) -> String) -> String {
        if self.chance(p_present) {
            value(self)
        } else {
            String::new()
        }
    }

    /// Sometimes written with a decimal comma, as in French exports.
    fn number(&mut self, v: f64) -> String {
        let s = format!("{v:.1}");
        if self.chance(0.3) {
            s.replace('.', ",")
        } else {
            s
        }
    }

    fn date(&mut self, year_from: i32) -> String {
        let y = year_from + self.below(6) as i32;
        let m = 1 + self.below(12);
        let d = 1 + self.below(28);
        if self.chance(0.5) {
            format!("{d:02}/{m:02}/{y}")
        } else {
            format!("{y}-{m:02}-{d:02}")
        }
    }

    fn noisy(&mut self, base: f64, spread: f64) -> f64 {
        base * (1.0 + self.rng.random_range(-spread..spread))
    }
}

#[derive(Clone, Copy)]
struct Lot {
    drug: usize,
    form: usize,
    width: f64,
    height: f64,
    diameter: f64,
    thickness: f64,
    length: f64,
}

const DRUGS: [&str; 4] = ["Cannabis", "Cocaïne", "Amphétamine and derivatives", "Miscellaneous"];
const DRUG_WEIGHTS: [f64; 4] = [0.45, 0.30, 0.15, 0.10];
const FORMS: [&[&str]; 4] = [
    &["Résine", "Herbe", "Huile"],
    &["Chlorhydrate", "Base"],
    &["Poudre", "Comprimé"],
    &["Poudre", "Liquide", "Buvard"],
];
const COLOURS: [&str; 8] = ["brun", "vert", "blanc", "beige", "rose", "bleu", "noir", "jaune"];

/// Writes the tables, their mappings and `manifest.json` into `out_dir`.
pub fn generate(config: SynthConfig, out_dir: &Path) -> io::Result<SynthSummary> {
    fs::create_dir_all(out_dir)?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let n = |class: &str| scaled(config.samples, class);

    // Locations: countries, then regions, then cities, each inside the
    // previous level.
    let mut locations = Table::new("Location", "locations.csv")
        .data("name", "locationName", Datatype::String)
        .data("postal", "postalCode", Datatype::String)
        .link("within", "isLocatedIn", "Location");
    // At least one city below a region below a country.
    let n_loc = n("Location").max(3);
    let countries = (n_loc / 100).max(1);
    let regions = (n_loc / 10).max(1);
    for i in 0..n_loc {
        let within = if i < countries {
            String::new()
        } else if i < countries + regions {
            id("loc", g.below(countries))
        } else {
            id("loc", countries + g.below(regions.min(n_loc - countries)))
        };
        let postal = g.opt(0.8, |g| format!("{:05}", g.below(99_999)));
        locations.push(vec![id("loc", i), format!("Lieu {i}"), postal, within]);
    }

    let mut departments = Table::new("Department", "departments.csv")
        .data("name", "departmentName", Datatype::String)
        .link("based_in", "isBasedIn", "Location");
    for i in 0..n("Department") {
        let loc = id("loc", g.below(n_loc));
        departments.push(vec![id("dep", i), format!("Brigade {i}"), loc]);
    }

    let mut labs = Table::new("Laboratory", "laboratories.csv").data("name", "laboratoryName", Datatype::String);
    for i in 0..n("Laboratory") {
        labs.push(vec![id("lab", i), format!("Laboratoire {i}")]);
    }

    let mut experts = Table::new("Expert", "experts.csv").link("lab", "worksIn", "Laboratory");
    for i in 0..n("Expert") {
        let lab = id("lab", g.below(n("Laboratory")));
        experts.push(vec![id("exp", i), lab]);
    }

    let mut investigations = Table::new("Investigation", "investigations.csv");
    for i in 0..n("Investigation") {
        investigations.push(vec![id("inv", i)]);
    }

    let mut seizures = Table::new("Seizure", "seizures.csv")
        .data("number", "seizureNumber", Datatype::String)
        .data("date", "seizureDate", Datatype::Date)
        .data("quantity", "seizedQuantity", Datatype::Float)
        .data("comment", "seizureComment", Datatype::String)
        .link("location", "seizedAt", "Location")
        .link("department", "seizedBy", "Department")
        .link("investigation", "isPartOfInvestigation", "Investigation");
    for i in 0..n("Seizure") {
        let qty = g.rng.random_range(1.0..5_000.0);
        let row = vec![
            id("sz", i),
            format!("S{i:06}"),
            g.date(2015),
            g.number(qty),
            g.opt(0.2, |g| format!("Saisie {}", g.pick(&["routière", "domicile", "aéroport", "colis"]))),
            id("loc", countries + regions + g.below((n_loc - countries - regions).max(1))),
            id("dep", g.below(n("Department"))),
            g.opt(0.7, |g| id("inv", g.below(n("Investigation")))),
        ];
        seizures.push(row);
    }

    let mut packagings = Table::new("Packaging", "packagings.csv")
        .data("type", "packagingType", Datatype::String)
        .data("material", "packagingMaterial", Datatype::String);
    for i in 0..n("Packaging") {
        let t = g.pick(&["sachet", "plaquette", "boîte", "film"]).to_string();
        let m = g.pick(&["plastique", "papier", "aluminium", "carton"]).to_string();
        packagings.push(vec![id("pkg", i), t, m]);
    }

    let mut sealed = Table::new("Sealed", "sealed.csv")
        .data("number", "sealedNumber", Datatype::String)
        .data("date", "sealedDate", Datatype::Date)
        .data("weight", "sealedWeight", Datatype::Float)
        .link("seizure", "isSealedFrom", "Seizure")
        .link("packaging", "hasPackaging", "Packaging");
    for i in 0..n("Sealed") {
        let w = g.rng.random_range(0.5..2_000.0);
        let row = vec![
            id("sl", i),
            format!("SC{i:06}"),
            g.date(2015),
            g.number(w),
            id("sz", g.below(n("Seizure"))),
            g.opt(0.6, |g| id("pkg", g.below(n("Packaging")))),
        ];
        sealed.push(row);
    }

    let mut logos = Table::new("Logo", "logos.csv")
        .data("name", "logoName", Datatype::String)
        .data("description", "logoDescription", Datatype::String);
    for i in 0..n("Logo") {
        let d = g.opt(0.5, |g| format!("Motif {}", g.pick(&["étoile", "couronne", "lettre", "animal"])));
        logos.push(vec![id("logo", i), format!("Logo {i}"), d]);
    }

    let mut shapes = Table::new("Shape", "shapes.csv").data("name", "shapeName", Datatype::String);
    for i in 0..n("Shape") {
        shapes.push(vec![id("shape", i), format!("Forme {i}")]);
    }

    let mut aspects = Table::new("ExternalAspect", "aspects.csv")
        .data("description", "aspectDescription", Datatype::String)
        .data("colour", "aspectColour", Datatype::String)
        .link("logo", "hasLogo", "Logo");
    for i in 0..n("ExternalAspect") {
        let row = vec![
            id("asp", i),
            g.opt(0.5, |g| g.pick(&["lisse", "granuleux", "friable", "compact"]).to_string()),
            g.pick(&COLOURS).to_string(),
            g.opt(0.4, |g| id("logo", g.below(n("Logo")))),
        ];
        aspects.push(row);
    }

    let mut actives = Table::new("ActivePrinciple", "active-principles.csv")
        .data("name", "substanceName", Datatype::String)
        .data("cas", "casNumber", Datatype::String)
        .data("concentration", "concentration", Datatype::Float);
    for i in 0..n("ActivePrinciple") {
        let c = g.rng.random_range(1.0..95.0);
        let row = vec![id("ap", i), format!("Principe {i}"), g.opt(0.6, |g| format!("{}-{}-{}", 100 + g.below(900), 10 + g.below(90), g.below(10))), g.number(c)];
        actives.push(row);
    }

    let mut cuttings = Table::new("CuttingProduct", "cutting-products.csv")
        .data("name", "substanceName", Datatype::String)
        .data("ratio", "cuttingRatio", Datatype::Float);
    for i in 0..n("CuttingProduct") {
        let r = g.rng.random_range(0.01..0.9);
        let ratio = format!("{r:.2}");
        cuttings.push(vec![id("cp", i), format!("Coupage {i}"), ratio]);
    }

    let mut profiles = Table::new("ChemicalProfile", "profiles.csv")
        .data("code", "profileCode", Datatype::String)
        .data("date", "profileDate", Datatype::Date)
        .link("compound", "hasProfileCompound", "ActivePrinciple");
    for i in 0..n("ChemicalProfile") {
        let row = vec![
            id("prof", i),
            format!("P{i:05}"),
            g.date(2016),
            id("ap", g.below(n("ActivePrinciple"))),
        ];
        profiles.push(row);
    }

    let mut analyses = Table::new("Analysis", "analyses.csv")
        .link("expert", "performedBy", "Expert")
        .link("lab", "performedIn", "Laboratory");
    for i in 0..n("Analysis") {
        let row = vec![id("ana", i), id("exp", g.below(n("Expert"))), id("lab", g.below(n("Laboratory")))];
        analyses.push(row);
    }

    // Samples drawn from production lots.
    let lots: Vec<Lot> = (0..(config.samples / 10).max(1))
        .map(|_| {
            let u: f64 = g.rng.random();
            let mut acc = 0.0;
            let drug = DRUG_WEIGHTS
                .iter()
                .position(|w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(3);
            Lot {
                drug,
                form: g.below(FORMS[drug].len()),
                width: g.rng.random_range(5.0..250.0),
                height: g.rng.random_range(5.0..120.0),
                diameter: g.rng.random_range(5.0..12.0),
                thickness: g.rng.random_range(2.0..20.0),
                length: g.rng.random_range(10.0..300.0),
            }
        })
        .collect();
    let mut samples = Table::new("Sample", "samples.csv")
        .data("number", "sampleNumber", Datatype::String)
        .data("drug", "drugType", Datatype::String)
        .data("form", "chemicalForm", Datatype::String)
        .data("width", "width", Datatype::Float)
        .data("height", "height", Datatype::Float)
        .data("diameter", "diameter", Datatype::Float)
        .data("thickness", "thickness", Datatype::Float)
        .data("length", "length", Datatype::Float)
        .data("weight", "weight", Datatype::Float)
        .data("colour", "colour", Datatype::String)
        .data("break_line", "breakLine", Datatype::Boolean)
        .data("purity", "purity", Datatype::Float)
        .data("received", "receptionDate", Datatype::Date)
        .data("comment", "comment", Datatype::String)
        .link("sealed", "comesFrom", "Sealed")
        .link("aspect", "hasExternalAspect", "ExternalAspect")
        .link("shape", "hasShape", "Shape")
        .link("analysis", "hasAnalysis", "Analysis")
        .link("profile", "hasChimicalProfile", "ChemicalProfile")
        .link("active", "hasActivePrincipal", "ActivePrinciple")
        .link("cutting", "hasCuttingProduct", "CuttingProduct")
        .link("close_to", "isCloseTo", "Sample");
    let mut lot_of = Vec::with_capacity(config.samples);
    for i in 0..config.samples {
        let li = g.below(lots.len());
        lot_of.push(li);
        let lot = lots[li];
        let drug = if g.chance(0.005) {
            "tabac".to_string()
        } else if g.chance(0.01) {
            String::new()
        } else {
            let d = DRUGS[lot.drug];
            if g.chance(0.3) { d.to_uppercase() } else { d.to_string() }
        };
        let solid = lot.form == 0 || lot.drug == 2;
        let dim = |g: &mut Gen, base: f64, present: f64| {
            if g.chance(0.003) {
                "n/a".to_string()
            } else {
                g.opt(present, |g| {
                    let v = g.noisy(base, 0.03);
                    g.number(v)
                })
            }
        };
        let (pw, pd) = if solid { (0.9, 0.0) } else { (0.0, 0.0) };
        let tablet = lot.drug == 2 && lot.form == 1;
        let weight = g.rng.random_range(0.1..500.0);
        let purity = g.rng.random_range(1.0..99.0);
        let row = vec![
            id("smp", i),
            format!("{i}"),
            drug,
            g.opt(0.95, |_| FORMS[lot.drug][lot.form].to_string()),
            dim(&mut g, lot.width, if tablet { 0.0 } else { pw }),
            dim(&mut g, lot.height, if tablet { 0.0 } else { pw }),
            dim(&mut g, lot.diameter, if tablet { 0.95 } else { pd }),
            dim(&mut g, lot.thickness, if solid { 0.7 } else { 0.0 }),
            dim(&mut g, lot.length, if solid && !tablet { 0.3 } else { 0.0 }),
            g.number(weight),
            g.opt(0.7, |g| g.pick(&COLOURS).to_string()),
            g.opt(if tablet { 0.9 } else { 0.0 }, |g| g.pick(&["oui", "non", "true", "false"]).to_string()),
            g.opt(if lot.drug == 1 || lot.drug == 2 { 0.8 } else { 0.1 }, |g| g.number(purity)),
            g.date(2018),
            g.opt(0.1, |g| g.pick(&["Échantillon  conforme", "À revoir", "scellé abîmé"]).to_string()),
            id("sl", g.below(n("Sealed"))),
            g.opt(0.6, |g| id("asp", g.below(n("ExternalAspect")))),
            g.opt(if solid { 0.8 } else { 0.1 }, |g| id("shape", g.below(n("Shape")))),
            g.opt(0.7, |g| id("ana", g.below(n("Analysis")))),
            g.opt(if lot.drug == 1 || lot.drug == 2 { 0.8 } else { 0.05 }, |g| id("prof", g.below(n("ChemicalProfile")))),
            g.opt(0.5, |g| id("ap", g.below(n("ActivePrinciple")))),
            g.opt(0.3, |g| id("cp", g.below(n("CuttingProduct")))),
            String::new(),
        ];
        samples.push(row);
    }
    // Some samples were already judged close to an earlier lot-mate.
    let close_col = samples.header.len() - 1;
    let mut last_in_lot: Vec<Option<usize>> = vec![None; lots.len()];
    for (i, &li) in lot_of.iter().enumerate() {
        if let Some(prev) = last_in_lot[li] {
            if g.chance(0.05) {
                samples.rows[i][close_col] = id("smp", prev);
            }
        }
        last_in_lot[li] = Some(i);
    }

    let tables = [
        locations,
        departments,
        labs,
        experts,
        investigations,
        seizures,
        packagings,
        sealed,
        logos,
        shapes,
        aspects,
        actives,
        cuttings,
        profiles,
        analyses,
        samples,
    ];
    let mut manifest = Manifest { tables: Vec::new() };
    let mut summary = Vec::new();
    for t in &tables {
        t.write(out_dir)?;
        manifest.tables.push(ManifestTable {
            mapping: PathBuf::from(mapping_file(t.file)),
            input: PathBuf::from(t.file),
        });
        summary.push(TableSummary {
            class: t.class.into(),
            file: t.file.into(),
            rows: t.rows.len(),
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?)?;
    Ok(SynthSummary {
        samples: config.samples,
        seed: config.seed,
        instances: summary.iter().map(|t| t.rows).sum(),
        tables: summary,
        manifest: manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::ingest::populate_manifest;
    use crate::schema::load_schema;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("batchline-synth-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn proportions_at_full_scale() {
        let total: usize = PER_20K.iter().map(|(_, n)| n).sum::<usize>() + 20_000;
        assert!((65_000..72_000).contains(&total), "{total}");
    }

    #[test]
    fn same_seed_same_files() {
        let (a, b) = (tmp("a"), tmp("b"));
        generate(SynthConfig { samples: 300, seed: 7 }, &a).unwrap();
        generate(SynthConfig { samples: 300, seed: 7 }, &b).unwrap();
        for f in ["samples.csv", "locations.csv", "manifest.json", "samples.mapping.json"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let c = tmp("c");
        generate(SynthConfig { samples: 300, seed: 8 }, &c).unwrap();
        assert_ne!(fs::read(a.join("samples.csv")).unwrap(), fs::read(c.join("samples.csv")).unwrap());
        for d in [a, b, c] {
            fs::remove_dir_all(d).unwrap();
        }
    }

    #[test]
    fn tiny_datasets_generate() {
        for samples in 1..=12 {
            let dir = tmp(&format!("tiny{samples}"));
            let s = generate(SynthConfig { samples, seed: 5 }, &dir).unwrap();
            let sample_rows = s.tables.iter().find(|t| t.class == "Sample").unwrap().rows;
            assert_eq!(sample_rows, samples);
            fs::remove_dir_all(dir).unwrap();
        }
    }

    #[test]
    fn output_loads_against_shipped_schema() {
        let dir = tmp("load");
        let s = generate(SynthConfig { samples: 500, seed: 1 }, &dir).unwrap();
        let schema = load_schema(include_bytes!("../../../schema/drug-domain.json")).unwrap();
        let mut g = Graph::new();
        let stats = populate_manifest(&mut g, &schema, &s.manifest).unwrap();
        assert_eq!(stats.rows_read, s.instances);
        assert_eq!(stats.instances_created, s.instances);
        assert!(stats.values_skipped > 0);
        fs::remove_dir_all(dir).unwrap();
    }
}
