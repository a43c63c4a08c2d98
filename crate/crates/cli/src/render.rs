use serde_json::Value;

fn s(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn rows(v: &Value) -> &[Value] {
    v.as_array().map(Vec::as_slice).unwrap_or_default()
}

fn timestamp(nanos: &Value) -> String {
    nanos
        .as_u64()
        .and_then(|n| chrono::DateTime::from_timestamp((n / 1_000_000_000) as i64, (n % 1_000_000_000) as u32))
        .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true))
        .unwrap_or_else(|| "-".into())
}

pub fn published(dv: &Value) -> String {
    let mut line = format!(
        "published {} {} v{}",
        crate::bundle::slug(dv["kind"].as_str().unwrap_or_default()).unwrap_or("?"),
        s(&dv["name"]),
        s(&dv["version"])
    );
    if let Some(compatible) = dv["compatibility"]["compatible"].as_bool() {
        line.push_str(if compatible { " (compatible)" } else { " (breaking)" });
    }
    line
}

pub fn item(view: &Value) -> String {
    let mut out = vec![format!("item {}", s(&view["id"]))];
    for p in rows(&view["properties"]) {
        out.push(format!("  {} = {}", s(&p["name"]), p["value"]));
    }
    for c in rows(&view["collections"]) {
        let slots: Vec<String> = rows(&c["slots"]).iter().map(|x| s(&x["member"])).collect();
        out.push(format!("  {}[{}]: {}", s(&c["name"]), s(&c["member_type"]), slots.join(" ")));
    }
    if let Some(states) = view["workflow"]["activity_states"].as_object() {
        for (step, state) in states {
            out.push(format!("  {step}: {}", s(state)));
        }
    }
    out.join("\n")
}

pub fn worklist(jobs: &Value) -> String {
    rows(jobs)
        .iter()
        .map(|j| {
            let transitions: Vec<String> = rows(&j["allowed_transitions"]).iter().map(s).collect();
            format!(
                "{}\t{}\t{}\t{}\t{}",
                s(&j["item_name"]),
                s(&j["step_path"]),
                s(&j["state"]),
                transitions.join(","),
                s(&j["item"])
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn history(events: &Value) -> String {
    rows(events)
        .iter()
        .map(|e| {
            let detail = match e["kind"].as_str().unwrap_or_default() {
                "Created" => format!("from {}", s(&e["description"]["name"])),
                "PropertyChanged" => format!("{} = {}", s(&e["name"]), e["value"]),
                "CollectionChanged" => format!("{}[{}] = {}", s(&e["collection"]), s(&e["slot"]), s(&e["member"])),
                "Transition" => {
                    let mut d = format!(
                        "{} {} ({} -> {})",
                        s(&e["step_path"]),
                        s(&e["transition"]),
                        s(&e["state_before"]),
                        s(&e["state_after"])
                    );
                    if let Some(hash) = e["outcome_ref"].as_str() {
                        d.push_str(&format!(" outcome {}", &hash[..hash.len().min(12)]));
                    }
                    d
                }
                other => other.to_owned(),
            };
            format!(
                "{}\t{}\t{}\t{}\t{}",
                s(&e["seq"]),
                timestamp(&e["timestamp"]),
                s(&e["agent"]),
                s(&e["kind"]),
                detail
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn graph(g: &Value) -> String {
    let mut out = vec![format!(
        "{}: {} nodes, {} edges",
        s(&g["root"]),
        rows(&g["nodes"]).len(),
        rows(&g["edges"]).len()
    )];
    for e in rows(&g["edges"]) {
        out.push(format!("  {} -> {} (seq {})", s(&e["component"]), s(&e["assembly"]), s(&e["seq"])));
    }
    out.join("\n")
}

pub fn bindings(list: &Value) -> String {
    rows(list)
        .iter()
        .map(|b| format!("{}\t{}", s(&b["path"]), s(&b["item"])))
        .collect::<Vec<_>>()
        .join("\n")
}
