//! Random schemas, enumerated perturbation documents and the violations
//! each perturbation is expected to produce.
//!
//! Expectations are attached to documents as they are built, one rule per
//! perturbation, so they do not depend on the validator's traversal.

use proptest::prelude::*;
use serde_json::{json, Map, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Kind {
    Str,
    Int,
    Dec,
    Bool,
    Ts,
    Record(Vec<Field>),
    List(Box<Field>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cons {
    None,
    Range(Option<i64>, Option<i64>),
    Enum(Vec<String>),
    Pattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub name: String,
    pub kind: Kind,
    pub required: bool,
    pub cons: Cons,
}

pub const PATTERN: &str = "[a-z]+";
pub const UNKNOWN: &str = "zz_unknown";

fn range() -> impl Strategy<Value = Cons> {
    (proptest::option::of(-5i64..5), proptest::option::of(0i64..10)).prop_map(|(lo, hi)| match (lo, hi) {
        (Some(l), Some(h)) if l > h => Cons::Range(Some(h), Some(l)),
        (l, h) => Cons::Range(l, h),
    })
}

fn scalar() -> impl Strategy<Value = (Kind, Cons)> {
    prop_oneof![
        Just((Kind::Str, Cons::None)),
        Just((Kind::Str, Cons::Pattern)),
        proptest::sample::subsequence(vec!["a", "b", "c", "d"], 1..4)
            .prop_map(|v| (Kind::Str, Cons::Enum(v.into_iter().map(String::from).collect()))),
        Just((Kind::Int, Cons::None)),
        range().prop_map(|c| (Kind::Int, c)),
        Just((Kind::Dec, Cons::None)),
        range().prop_map(|c| (Kind::Dec, c)),
        Just((Kind::Bool, Cons::None)),
        Just((Kind::Ts, Cons::None)),
    ]
}

fn kind_at(depth: u32) -> BoxedStrategy<(Kind, Cons)> {
    if depth >= 2 {
        return scalar().boxed();
    }
    prop_oneof![
        4 => scalar(),
        1 => fields_at(depth + 1, 3).prop_map(|f| (Kind::Record(f), Cons::None)),
        1 => kind_at(depth + 1).prop_map(|(k, c)| {
            (Kind::List(Box::new(Field { name: "*".into(), kind: k, required: true, cons: c })), Cons::None)
        }),
    ]
    .boxed()
}

fn fields_at(depth: u32, max: usize) -> BoxedStrategy<Vec<Field>> {
    proptest::collection::vec((kind_at(depth), any::<bool>()), 0..=max)
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, ((kind, cons), required))| Field { name: format!("f{i}"), kind, required, cons })
                .collect()
        })
        .boxed()
}

/// Schemas with at most six top-level fields and records nested at most
/// two deep.
pub fn schema_fields() -> BoxedStrategy<Vec<Field>> {
    fields_at(0, 6)
}

fn kind_name(k: &Kind) -> &'static str {
    match k {
        Kind::Str => "string",
        Kind::Int => "integer",
        Kind::Dec => "decimal",
        Kind::Bool => "boolean",
        Kind::Ts => "timestamp",
        Kind::Record(_) => "record",
        Kind::List(_) => "list",
    }
}

fn field_json(f: &Field) -> Value {
    let mut v = json!({"name": f.name, "kind": kind_name(&f.kind), "required": f.required});
    match &f.cons {
        Cons::None => {}
        Cons::Range(lo, hi) => {
            let mut c = Map::new();
            if let Some(l) = lo {
                c.insert("min".into(), json!(l));
            }
            if let Some(h) = hi {
                c.insert("max".into(), json!(h));
            }
            v["constraints"] = Value::Object(c);
        }
        Cons::Enum(lits) => v["constraints"] = json!({"enum": lits}),
        Cons::Pattern => v["constraints"] = json!({"pattern": PATTERN}),
    }
    match &f.kind {
        Kind::Record(children) => v["children"] = Value::Array(children.iter().map(field_json).collect()),
        Kind::List(el) => v["children"] = json!([field_json(el)]),
        _ => {}
    }
    v
}

pub fn schema_json(name: &str, fields: &[Field]) -> Value {
    json!({"name": name, "fields": fields.iter().map(field_json).collect::<Vec<_>>()})
}

pub type Expected = Vec<(String, &'static str)>;

/// One way of filling (or not filling) a field.
#[derive(Clone, Debug)]
pub struct Variant {
    pub value: Option<Value>,
    pub expected: Expected,
}

fn num(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

/// Decimal literal for `c` hundredths, always written with a fraction.
fn cents(c: i64) -> Value {
    let sign = if c < 0 { "-" } else { "" };
    num(format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100))
}

fn ok(v: Value) -> Variant {
    Variant { value: Some(v), expected: vec![] }
}

fn bad(v: Value, path: &str, code: &'static str) -> Variant {
    Variant { value: Some(v), expected: vec![(path.to_owned(), code)] }
}

fn anchor(lo: &Option<i64>, hi: &Option<i64>) -> i64 {
    lo.or(*hi).unwrap_or(0)
}

/// Values the field accepts.
pub fn valid_values(f: &Field) -> Vec<Value> {
    match (&f.kind, &f.cons) {
        (Kind::Str, Cons::Enum(l)) => l.iter().map(|s| json!(s)).collect(),
        (Kind::Str, Cons::Pattern) => vec![json!("abc"), json!("z")],
        (Kind::Str, _) => vec![json!("s"), json!(""), json!("ABC")],
        (Kind::Int, Cons::Range(lo, hi)) => {
            let a = anchor(lo, hi);
            let mut v = vec![json!(a)];
            if let (Some(l), Some(h)) = (lo, hi) {
                v.push(json!(h));
                v.push(json!((l + h) / 2));
            }
            v
        }
        (Kind::Int, _) => vec![json!(0), json!(-7), json!(12345678901234_i64)],
        (Kind::Dec, Cons::Range(lo, hi)) => {
            let a = anchor(lo, hi);
            let mut v = vec![cents(a * 100), json!(a)];
            match (lo, hi) {
                (Some(l), Some(h)) if l < h => v.push(cents(l * 100 + 50)),
                (Some(l), None) => v.push(cents(l * 100 + 25)),
                (None, Some(h)) => v.push(cents(h * 100 - 25)),
                _ => {}
            }
            v
        }
        (Kind::Dec, _) => vec![num("12.50".into()), json!(3), num("-0.001".into())],
        (Kind::Bool, _) => vec![json!(true), json!(false)],
        (Kind::Ts, _) => vec![json!("2024-01-02T03:04:05Z"), json!("2024-06-30T23:59:59.5+02:00")],
        (Kind::Record(children), _) => {
            let required: Map<String, Value> = children
                .iter()
                .filter(|c| c.required)
                .map(|c| (c.name.clone(), valid_values(c)[0].clone()))
                .collect();
            let full: Map<String, Value> =
                children.iter().map(|c| (c.name.clone(), valid_values(c)[0].clone())).collect();
            vec![Value::Object(required), Value::Object(full)]
        }
        (Kind::List(el), _) => {
            let vals = valid_values(el);
            vec![json!([]), Value::Array(vals.clone())]
        }
    }
}

fn wrong_type(k: &Kind) -> Value {
    match k {
        Kind::Str => json!(5),
        Kind::Int => num("1.5".into()),
        Kind::Dec => json!("1.5"),
        Kind::Bool => json!("yes"),
        Kind::Ts => json!("yesterday"),
        Kind::Record(_) => json!([1]),
        Kind::List(_) => json!({"a": 1}),
    }
}

fn violating(f: &Field) -> Option<Value> {
    match (&f.kind, &f.cons) {
        (Kind::Str, Cons::Enum(_)) => Some(json!("zzz")),
        (Kind::Str, Cons::Pattern) => Some(json!("ABC")),
        (Kind::Int, Cons::Range(Some(l), _)) => Some(json!(l - 1)),
        (Kind::Int, Cons::Range(None, Some(h))) => Some(json!(h + 1)),
        (Kind::Dec, Cons::Range(Some(l), _)) => Some(cents(l * 100 - 50)),
        (Kind::Dec, Cons::Range(None, Some(h))) => Some(num(format!("{h}.0001"))),
        _ => None,
    }
}

/// Top-level perturbations of a field at `path`: absent, valid, wrong type
/// and constraint-violating.
pub fn primary_variants(f: &Field, path: &str) -> Vec<Variant> {
    let mut out = vec![Variant {
        value: None,
        expected: if f.required { vec![(path.to_owned(), "MissingRequired")] } else { vec![] },
    }];
    out.push(ok(valid_values(f)[0].clone()));
    out.push(bad(wrong_type(&f.kind), path, "TypeMismatch"));
    if let Some(v) = violating(f) {
        out.push(bad(v, path, "ConstraintViolation"));
    }
    out
}

/// Perturbations inside a record or list value, one at a time, with every
/// other part valid.
pub fn nested_variants(f: &Field, path: &str) -> Vec<Variant> {
    let mut out = Vec::new();
    match &f.kind {
        Kind::Record(children) => {
            let base: Map<String, Value> =
                children.iter().map(|c| (c.name.clone(), valid_values(c)[0].clone())).collect();
            let mut extra = base.clone();
            extra.insert(UNKNOWN.into(), json!(1));
            out.push(bad(Value::Object(extra), &format!("{path}/{UNKNOWN}"), "UnknownField"));
            for c in children {
                let cpath = format!("{path}/{}", c.name);
                let mut inner = primary_variants(c, &cpath);
                inner.extend(nested_variants(c, &cpath));
                for v in inner {
                    if v.expected.is_empty() {
                        continue;
                    }
                    let mut doc = base.clone();
                    match v.value {
                        Some(val) => doc.insert(c.name.clone(), val),
                        None => doc.remove(&c.name),
                    };
                    out.push(Variant { value: Some(Value::Object(doc)), expected: v.expected });
                }
            }
        }
        Kind::List(el) => {
            let good = valid_values(el)[0].clone();
            let epath = format!("{path}/1");
            let mut inner = primary_variants(el, &epath);
            inner.extend(nested_variants(el, &epath));
            for v in inner {
                let Some(val) = v.value else { continue };
                if v.expected.is_empty() {
                    continue;
                }
                out.push(Variant { value: Some(json!([good.clone(), val])), expected: v.expected });
            }
        }
        _ => {}
    }
    out
}

pub struct Case {
    pub doc: Value,
    pub expected: Expected,
}

fn assemble(fields: &[Field], choice: &[&Variant]) -> Case {
    let mut doc = Map::new();
    let mut expected = Vec::new();
    for (f, v) in fields.iter().zip(choice) {
        if let Some(val) = &v.value {
            doc.insert(f.name.clone(), val.clone());
        }
        expected.extend(v.expected.iter().cloned());
    }
    Case { doc: Value::Object(doc), expected }
}

/// Every combination of primary variants across the top-level fields, then
/// each nested perturbation and an unknown top-level key with the remaining
/// fields valid, then a handful of non-record documents.
pub fn enumerate(fields: &[Field]) -> Vec<Case> {
    let per_field: Vec<Vec<Variant>> = fields.iter().map(|f| primary_variants(f, &format!("/{}", f.name))).collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; fields.len()];
    loop {
        let choice: Vec<&Variant> = idx.iter().zip(&per_field).map(|(i, v)| &v[*i]).collect();
        out.push(assemble(fields, &choice));
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < per_field[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            break;
        }
    }
    let valid: Vec<&Variant> = per_field.iter().map(|v| &v[1]).collect();
    for (i, f) in fields.iter().enumerate() {
        for v in nested_variants(f, &format!("/{}", f.name)) {
            let mut choice = valid.clone();
            choice[i] = &v;
            out.push(assemble(fields, &choice));
        }
    }
    let mut extra = assemble(fields, &valid);
    extra.doc.as_object_mut().unwrap().insert(UNKNOWN.into(), json!(null));
    extra.expected.push((format!("/{UNKNOWN}"), "UnknownField"));
    out.push(extra);
    for doc in [json!(null), json!([]), json!("doc"), json!(1)] {
        out.push(Case { doc, expected: vec![("/".into(), "TypeMismatch")] });
    }
    out
}

/// Documents valid under `fields`, built from the valid-value pools with
/// optional fields toggled by `bits`.
pub fn valid_document(fields: &[Field], bits: &mut impl FnMut() -> u32) -> Value {
    let mut doc = Map::new();
    for f in fields {
        let include = f.required || bits() % 2 == 0;
        if !include {
            continue;
        }
        let value = match &f.kind {
            Kind::Record(children) => valid_document(children, bits),
            Kind::List(el) => {
                let n = bits() % 3;
                let pool = valid_values(el);
                Value::Array(
                    (0..n)
                        .map(|_| match &el.kind {
                            Kind::Record(ch) => valid_document(ch, bits),
                            _ => pool[bits() as usize % pool.len()].clone(),
                        })
                        .collect(),
                )
            }
            _ => {
                let pool = valid_values(f);
                pool[bits() as usize % pool.len()].clone()
            }
        };
        doc.insert(f.name.clone(), value);
    }
    Value::Object(doc)
}

/// Random edits to a schema, some compatible and some not.
#[derive(Clone, Debug)]
pub enum Edit {
    AddOptional,
    AddRequired,
    Remove,
    ToggleRequired,
    ChangeKind,
    LowerMin,
    RaiseMin,
    DropBounds,
    AddBound,
    EnumGrow,
    EnumShrink,
    DropPattern,
    AddPattern,
}

pub fn edit() -> impl Strategy<Value = (Edit, proptest::sample::Index, bool)> {
    (
        prop_oneof![
            Just(Edit::AddOptional),
            Just(Edit::AddRequired),
            Just(Edit::Remove),
            Just(Edit::ToggleRequired),
            Just(Edit::ChangeKind),
            Just(Edit::LowerMin),
            Just(Edit::RaiseMin),
            Just(Edit::DropBounds),
            Just(Edit::AddBound),
            Just(Edit::EnumGrow),
            Just(Edit::EnumShrink),
            Just(Edit::DropPattern),
            Just(Edit::AddPattern),
        ],
        any::<proptest::sample::Index>(),
        any::<bool>(),
    )
}

fn count(fields: &[Field]) -> usize {
    fields.iter().map(|f| 1 + count_within(f)).sum()
}

fn count_within(f: &Field) -> usize {
    match &f.kind {
        Kind::Record(ch) => count(ch),
        Kind::List(el) => 1 + count_within(el),
        _ => 0,
    }
}

fn nth_mut<'a>(fields: &'a mut [Field], n: &mut usize) -> Option<&'a mut Field> {
    for f in fields {
        if *n == 0 {
            return Some(f);
        }
        *n -= 1;
        if let Some(found) = nth_within(f, n) {
            return Some(found);
        }
    }
    None
}

fn nth_within<'a>(f: &'a mut Field, n: &mut usize) -> Option<&'a mut Field> {
    match &mut f.kind {
        Kind::Record(ch) => nth_mut(ch, n),
        Kind::List(el) => {
            if *n == 0 {
                return Some(el);
            }
            *n -= 1;
            nth_within(el, n)
        }
        _ => None,
    }
}

/// Applies `e` to the field chosen by `at` (depth-first over all fields,
/// including list elements), or to the top level for additions.
pub fn apply_edit(fields: &mut Vec<Field>, e: &Edit, at: proptest::sample::Index, deep: bool) {
    let new_name = |fs: &[Field]| {
        (0..)
            .map(|i| format!("n{i}"))
            .find(|n| fs.iter().all(|f| &f.name != n))
            .expect("a free name")
    };
    match e {
        Edit::AddOptional | Edit::AddRequired => {
            let required = matches!(e, Edit::AddRequired);
            let target: &mut Vec<Field> = if deep {
                match fields.iter_mut().find_map(|f| match &mut f.kind {
                    Kind::Record(ch) => Some(ch),
                    _ => None,
                }) {
                    Some(ch) => ch,
                    None => fields,
                }
            } else {
                fields
            };
            let name = new_name(target);
            target.push(Field { name, kind: Kind::Int, required, cons: Cons::None });
            return;
        }
        Edit::Remove => {
            if !fields.is_empty() {
                let i = at.index(fields.len());
                fields.remove(i);
            }
            return;
        }
        _ => {}
    }
    let total = count(fields);
    if total == 0 {
        return;
    }
    let mut n = at.index(total);
    let f = nth_mut(fields, &mut n).expect("index within field count");
    match e {
        Edit::ToggleRequired => {
            if f.name != "*" {
                f.required = !f.required;
            }
        }
        Edit::ChangeKind => {
            f.kind = match f.kind {
                Kind::Str => Kind::Int,
                _ => Kind::Str,
            };
            f.cons = Cons::None;
        }
        Edit::LowerMin | Edit::RaiseMin | Edit::DropBounds | Edit::AddBound => {
            if !matches!(f.kind, Kind::Int | Kind::Dec) {
                return;
            }
            let (lo, hi) = match &f.cons {
                Cons::Range(l, h) => (*l, *h),
                _ => (None, None),
            };
            let (lo, hi) = match e {
                Edit::LowerMin => (lo.map(|l| l - 2), hi),
                Edit::RaiseMin => (lo.map(|l| l + 1).or(Some(0)), hi),
                Edit::DropBounds => (None, None),
                _ => (lo, hi.or(Some(3))),
            };
            let (lo, hi) = match (lo, hi) {
                (Some(l), Some(h)) if l > h => (Some(h), Some(h)),
                x => x,
            };
            f.cons = if lo.is_none() && hi.is_none() { Cons::None } else { Cons::Range(lo, hi) };
        }
        Edit::EnumGrow | Edit::EnumShrink => {
            if let Cons::Enum(lits) = &mut f.cons {
                if matches!(e, Edit::EnumGrow) {
                    lits.push(format!("e{}", lits.len()));
                } else if lits.len() > 1 {
                    lits.pop();
                }
            }
        }
        Edit::DropPattern => {
            if f.cons == Cons::Pattern {
                f.cons = Cons::None;
            }
        }
        Edit::AddPattern => {
            if f.kind == Kind::Str && f.cons == Cons::None {
                f.cons = Cons::Pattern;
            }
        }
        _ => unreachable!(),
    }
}
