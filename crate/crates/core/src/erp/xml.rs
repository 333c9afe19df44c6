use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use chrono::NaiveDate;
use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::GatewayError;
use crate::engine::{code_to_id, DispatchList, FinishedGoodsRecord, OrderPlan, Route, RouteStep, TicketPlan};
use crate::tag::{OrderKind, OrderRef};

#[derive(Debug)]
struct Node {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Node>,
}

fn line_col(doc: &[u8], offset: u64) -> (usize, usize) {
    let upto = &doc[..(offset as usize).min(doc.len())];
    let line = upto.iter().filter(|&&b| b == b'\n').count() + 1;
    let col = upto.iter().rev().take_while(|&&b| b != b'\n').count() + 1;
    (line, col)
}

fn syntax(doc: &[u8], offset: u64, message: impl std::fmt::Display) -> GatewayError {
    let (line, column) = line_col(doc, offset);
    GatewayError::XmlSyntax { line, column, message: message.to_string() }
}

fn node_of(doc: &[u8], reader: &Reader<&[u8]>, e: &BytesStart) -> Result<Node, GatewayError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for a in e.attributes() {
        let a = a.map_err(|err| syntax(doc, reader.buffer_position(), err))?;
        let value = a.unescape_value().map_err(|err| syntax(doc, reader.buffer_position(), err))?;
        attrs.push((String::from_utf8_lossy(a.key.as_ref()).into_owned(), value.into_owned()));
    }
    Ok(Node { name, attrs, children: Vec::new() })
}

fn parse_tree(doc: &[u8]) -> Result<Node, GatewayError> {
    let mut reader = Reader::from_reader(doc);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Node> = Vec::new();
    let mut root = None;
    loop {
        let event = reader.read_event().map_err(|e| syntax(doc, reader.error_position(), e))?;
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(syntax(doc, reader.buffer_position(), "content after the root element"));
                }
                stack.push(node_of(doc, &reader, &e)?);
            }
            Event::Empty(e) => {
                if root.is_some() {
                    return Err(syntax(doc, reader.buffer_position(), "content after the root element"));
                }
                let node = node_of(doc, &reader, &e)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::End(_) => {
                let node = stack.pop().expect("reader checks end tag matching");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::Text(t) => {
                if !t.iter().all(u8::is_ascii_whitespace) {
                    let path = stack.iter().map(|n| n.name.as_str()).collect::<Vec<_>>().join("/");
                    return Err(GatewayError::Schema { path: format!("/{path}"), message: "unexpected text content".into() });
                }
            }
            Event::CData(_) => return Err(syntax(doc, reader.buffer_position(), "CDATA is not allowed")),
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(syntax(doc, reader.buffer_position(), "unexpected end of document"));
    }
    root.ok_or_else(|| syntax(doc, 0, "document has no root element"))
}

fn schema(path: &str, message: impl Into<String>) -> GatewayError {
    GatewayError::Schema { path: path.to_string(), message: message.into() }
}

fn semantic(path: &str, message: impl Into<String>) -> GatewayError {
    GatewayError::Semantic { path: path.to_string(), message: message.into() }
}

impl Node {
    /// Checks the attribute set exactly and returns values in `names` order.
    fn attrs<const N: usize>(&self, path: &str, names: [&str; N]) -> Result<[&str; N], GatewayError> {
        for (k, _) in &self.attrs {
            if !names.contains(&k.as_str()) {
                return Err(schema(path, format!("unexpected attribute {k}")));
            }
        }
        let mut out = [""; N];
        for (slot, name) in out.iter_mut().zip(names) {
            *slot = self
                .attrs
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| schema(path, format!("missing attribute {name}")))?;
        }
        Ok(out)
    }

    fn no_children(&self, path: &str) -> Result<(), GatewayError> {
        match self.children.first() {
            Some(c) => Err(schema(path, format!("unexpected element <{}>", c.name))),
            None => Ok(()),
        }
    }
}

fn number<T: std::str::FromStr>(path: &str, attr: &str, v: &str) -> Result<T, GatewayError> {
    v.trim().parse().map_err(|_| schema(path, format!("attribute {attr}={v:?} is not an unsigned integer")))
}

fn code_id(path: &str, attr: &str, v: &str) -> Result<u64, GatewayError> {
    if v.is_empty() {
        return Err(schema(path, format!("attribute {attr} is empty")));
    }
    code_to_id(v).ok_or_else(|| schema(path, format!("identifier {v:?} carries no numeric part")))
}

/// Detects two distinct codes mapping to the same numeric id.
struct IdSpace<'a> {
    what: &'static str,
    seen: HashMap<u64, &'a str>,
}

impl<'a> IdSpace<'a> {
    fn new(what: &'static str) -> Self {
        IdSpace { what, seen: HashMap::new() }
    }

    fn claim(&mut self, path: &str, code: &'a str, id: u64) -> Result<(), GatewayError> {
        match self.seen.insert(id, code) {
            Some(prev) if prev == code => Err(semantic(path, format!("duplicate {} id {code}", self.what))),
            Some(prev) => Err(semantic(path, format!("{} ids {prev} and {code} both map to {id}", self.what))),
            None => Ok(()),
        }
    }
}

pub fn parse_dispatch_xml(document: &[u8]) -> Result<DispatchList, GatewayError> {
    let root = parse_tree(document)?;
    if root.name != "DispatchList" {
        return Err(schema(&format!("/{}", root.name), "root element must be <DispatchList>"));
    }
    let [date, plant] = root.attrs("/DispatchList", ["date", "plant"])?;
    let dispatch_date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|_| schema("/DispatchList", format!("attribute date={date:?} is not a YYYY-MM-DD date")))?;
    if plant.is_empty() {
        return Err(schema("/DispatchList", "attribute plant is empty"));
    }

    let mut routes = Vec::new();
    let mut route_ids = IdSpace::new("route");
    let mut order_nodes = Vec::new();
    for child in &root.children {
        match child.name.as_str() {
            "Route" => {
                let [code] = child.attrs("/DispatchList/Route", ["id"])?;
                let path = format!("/DispatchList/Route[@id='{code}']");
                let id = code_id(&path, "id", code)?;
                let route_id = u32::try_from(id).map_err(|_| schema(&path, "route id exceeds 32 bits"))?;
                route_ids.claim(&path, code, id)?;
                routes.push(parse_route(child, &path, code, route_id)?);
            }
            "Order" => order_nodes.push(child),
            other => return Err(schema("/DispatchList", format!("unexpected element <{other}>"))),
        }
    }

    let route_by_code: HashMap<&str, u32> = routes.iter().map(|r: &Route| (r.code.as_str(), r.route_id)).collect();
    let mut orders = Vec::new();
    let mut refs = HashSet::new();
    let mut order_ids = [IdSpace::new("customer order"), IdSpace::new("make-to-stock order")];
    let mut product_ids = IdSpace::new("product");
    let mut product_codes: HashMap<&str, u64> = HashMap::new();
    let mut ticket_ids = IdSpace::new("ticket");
    for node in order_nodes {
        let [code, kind] = node.attrs("/DispatchList/Order", ["id", "type"])?;
        let path = format!("/DispatchList/Order[@id='{code}']");
        let kind = match kind {
            "customer" => OrderKind::CustomerSalesOrder,
            "make-to-stock" => OrderKind::InternalMakeToStock,
            other => return Err(schema(&path, format!("attribute type={other:?} must be customer or make-to-stock"))),
        };
        let order_id = code_id(&path, "id", code)?;
        order_ids[(kind == OrderKind::InternalMakeToStock) as usize].claim(&path, code, order_id)?;
        refs.insert((kind, order_id));

        let mut product = None;
        let mut route_ref = None;
        let mut tickets = Vec::new();
        for c in &node.children {
            let cpath = format!("{path}/{}", c.name);
            c.no_children(&cpath)?;
            match c.name.as_str() {
                "Product" => {
                    if product.is_some() {
                        return Err(schema(&cpath, "duplicate element <Product>"));
                    }
                    let [pcode, qty] = c.attrs(&cpath, ["id", "qty"])?;
                    let pid = code_id(&cpath, "id", pcode)?;
                    match product_codes.insert(pcode, pid) {
                        Some(_) => {}
                        None => product_ids.claim(&cpath, pcode, pid)?,
                    }
                    let qty: u32 = number(&cpath, "qty", qty)?;
                    if qty == 0 {
                        return Err(semantic(&cpath, "qty must be positive"));
                    }
                    product = Some((pcode, pid, qty));
                }
                "RouteRef" => {
                    if route_ref.is_some() {
                        return Err(schema(&cpath, "duplicate element <RouteRef>"));
                    }
                    let [rcode] = c.attrs(&cpath, ["id"])?;
                    let rid = *route_by_code
                        .get(rcode)
                        .ok_or_else(|| semantic(&path, format!("order {code} references undefined route {rcode}")))?;
                    route_ref = Some(rid);
                }
                "Ticket" => {
                    let [tcode] = c.attrs(&cpath, ["id"])?;
                    let tpath = format!("{path}/Ticket[@id='{tcode}']");
                    let tid = code_id(&tpath, "id", tcode)?;
                    ticket_ids.claim(&tpath, tcode, tid)?;
                    tickets.push(TicketPlan { ticket_id: tid, code: tcode.to_string() });
                }
                other => return Err(schema(&path, format!("unexpected element <{other}>"))),
            }
        }
        let (pcode, product_id, quantity) = product.ok_or_else(|| schema(&path, "missing element <Product>"))?;
        let route_id = route_ref.ok_or_else(|| schema(&path, "missing element <RouteRef>"))?;
        if tickets.is_empty() {
            return Err(schema(&path, "missing element <Ticket>"));
        }
        if (quantity as usize) < tickets.len() {
            return Err(semantic(&path, format!("qty {quantity} is below the {} tickets listed", tickets.len())));
        }
        orders.push(OrderPlan {
            order: OrderRef { kind, order_id },
            code: code.to_string(),
            product_id,
            product_code: pcode.to_string(),
            quantity,
            route_id,
            tickets,
        });
    }

    let list = DispatchList { dispatch_date, plant_id: plant.to_string(), routes, orders };
    list.validate().map_err(|e| semantic("/DispatchList", e.to_string()))?;
    Ok(list)
}

fn parse_route(node: &Node, path: &str, code: &str, route_id: u32) -> Result<Route, GatewayError> {
    let mut steps: Vec<RouteStep> = Vec::new();
    for c in &node.children {
        if c.name != "Step" {
            return Err(schema(path, format!("unexpected element <{}>", c.name)));
        }
        let [seq, wc, start, end] = c.attrs(&format!("{path}/Step"), ["seq", "workCenter", "plannedStart", "plannedEnd"])?;
        let spath = format!("{path}/Step[@seq='{seq}']");
        c.no_children(&spath)?;
        let seq: u32 = number(&spath, "seq", seq)?;
        let planned_start_us: u64 = number(&spath, "plannedStart", start)?;
        let planned_end_us: u64 = number(&spath, "plannedEnd", end)?;
        if wc.is_empty() {
            return Err(schema(&spath, "attribute workCenter is empty"));
        }
        if seq as usize != steps.len() + 1 {
            return Err(semantic(&spath, format!("expected seq {}", steps.len() + 1)));
        }
        if planned_end_us <= planned_start_us {
            return Err(semantic(&spath, "plannedEnd must be after plannedStart"));
        }
        if let Some(prev) = steps.last() {
            if planned_start_us < prev.planned_end_us {
                return Err(semantic(&spath, "planned interval overlaps the previous step"));
            }
        }
        steps.push(RouteStep { seq, work_center_id: wc.to_string(), planned_start_us, planned_end_us });
    }
    if steps.is_empty() {
        return Err(schema(path, "route has no <Step> elements"));
    }
    Ok(Route { route_id, code: code.to_string(), steps })
}

fn kind_attr(kind: OrderKind) -> &'static str {
    match kind {
        OrderKind::CustomerSalesOrder => "customer",
        OrderKind::InternalMakeToStock => "make-to-stock",
    }
}

/// Canonical XML for a dispatch list; parsing it back yields an equal list.
pub fn serialize_dispatch_xml(list: &DispatchList) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<DispatchList date=\"{}\" plant=\"{}\">", list.dispatch_date.format("%Y-%m-%d"), escape(&list.plant_id));
    for r in &list.routes {
        let _ = writeln!(out, "  <Route id=\"{}\">", escape(&r.code));
        for s in &r.steps {
            let _ = writeln!(
                out,
                "    <Step seq=\"{}\" workCenter=\"{}\" plannedStart=\"{}\" plannedEnd=\"{}\"/>",
                s.seq,
                escape(&s.work_center_id),
                s.planned_start_us,
                s.planned_end_us
            );
        }
        out.push_str("  </Route>\n");
    }
    let route_code: HashMap<u32, &str> = list.routes.iter().map(|r| (r.route_id, r.code.as_str())).collect();
    for o in &list.orders {
        let _ = writeln!(out, "  <Order id=\"{}\" type=\"{}\">", escape(&o.code), kind_attr(o.order.kind));
        let _ = writeln!(out, "    <Product id=\"{}\" qty=\"{}\"/>", escape(&o.product_code), o.quantity);
        let _ = writeln!(out, "    <RouteRef id=\"{}\"/>", escape(route_code.get(&o.route_id).copied().unwrap_or("")));
        for t in &o.tickets {
            let _ = writeln!(out, "    <Ticket id=\"{}\"/>", escape(&t.code));
        }
        out.push_str("  </Order>\n");
    }
    out.push_str("</DispatchList>\n");
    out
}

/// Finished-goods handoff document, items in (exitedAt, serial, product)
/// order so identical record sets always produce identical octets.
pub fn export_finished_goods_xml(plant_id: &str, records: &[FinishedGoodsRecord]) -> Vec<u8> {
    let mut sorted: Vec<&FinishedGoodsRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.exited_at_us, a.serial, &a.product_code, a.product_id, &a.order_code)
            .cmp(&(b.exited_at_us, b.serial, &b.product_code, b.product_id, &b.order_code))
    });
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if sorted.is_empty() {
        let _ = writeln!(out, "<FinishedGoods plant=\"{}\"/>", escape(plant_id));
        return out.into_bytes();
    }
    let _ = writeln!(out, "<FinishedGoods plant=\"{}\">", escape(plant_id));
    for r in sorted {
        let _ = writeln!(
            out,
            "  <Item order=\"{}\" product=\"{}\" serial=\"{}\" exitedAt=\"{}\"/>",
            escape(&r.order_code),
            escape(&r.product_code),
            r.serial,
            r.exited_at_us
        );
    }
    out.push_str("</FinishedGoods>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<DispatchList date="2013-03-06" plant="MOBICA-1">
  <Route id="R-1">
    <Step seq="1" workCenter="WC-CUT" plannedStart="100" plannedEnd="200"/>
    <Step seq="2" workCenter="WC-ASM" plannedStart="200" plannedEnd="300"/>
  </Route>
  <Order id="SO-1001" type="customer"><Product id="P-77" qty="4"/><RouteRef id="R-1"/><Ticket id="T-1"/></Order>
  <Order id="MTS-2001" type="make-to-stock"><Product id="P-77" qty="1"/><RouteRef id="R-1"/><Ticket id="T-3"/></Order>
</DispatchList>"#;

    #[test]
    fn parses_normative_shape() {
        let d = parse_dispatch_xml(DOC.as_bytes()).unwrap();
        assert_eq!(d.plant_id, "MOBICA-1");
        assert_eq!(d.routes[0].route_id, 1);
        assert_eq!(d.routes[0].steps[1].work_center_id, "WC-ASM");
        assert_eq!(d.orders[0].order, OrderRef::customer(1001));
        assert_eq!(d.orders[1].order, OrderRef::make_to_stock(2001));
        assert_eq!(d.orders[0].quantity, 4);
        assert_eq!(d.orders[1].tickets[0].ticket_id, 3);
    }

    #[test]
    fn serialize_round_trips() {
        let d = parse_dispatch_xml(DOC.as_bytes()).unwrap();
        let again = parse_dispatch_xml(serialize_dispatch_xml(&d).as_bytes()).unwrap();
        assert_eq!(again, d);
    }

    fn err(doc: &str) -> GatewayError {
        parse_dispatch_xml(doc.as_bytes()).unwrap_err()
    }

    #[test]
    fn undefined_route_names_the_order() {
        let e = err(&DOC.replace(r#"<RouteRef id="R-1"/><Ticket id="T-3"/>"#, r#"<RouteRef id="R-3"/><Ticket id="T-3"/>"#));
        match e {
            GatewayError::Semantic { path, message } => {
                assert!(path.contains("MTS-2001"), "{path}");
                assert!(message.contains("R-3"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inverted_step_names_the_step() {
        let e = err(&DOC.replace(r#"plannedStart="200" plannedEnd="300""#, r#"plannedStart="300" plannedEnd="250""#));
        match e {
            GatewayError::Semantic { path, .. } => assert_eq!(path, "/DispatchList/Route[@id='R-1']/Step[@seq='2']"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_and_syntax_errors() {
        assert!(matches!(err("<DispatchList"), GatewayError::XmlSyntax { .. }));
        assert!(matches!(err("<DispatchList date='x'></Dispatch>"), GatewayError::XmlSyntax { .. }));
        assert!(matches!(err(&DOC.replace("2013-03-06", "06/03/2013")), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace(r#" qty="4""#, "")), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace(r#"qty="4""#, r#"qty="four""#)), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace(r#"<RouteRef id="R-1"/><Ticket id="T-1"/>"#, r#"<Ticket id="T-1"/>"#)), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace("customer", "retail")), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace("<Route id=\"R-1\">", "<Route id=\"R-1\" extra=\"1\">")), GatewayError::Schema { .. }));
        assert!(matches!(err(&DOC.replace(r#"<Ticket id="T-3"/>"#, r#"<Ticket id="T-1"/>"#)), GatewayError::Semantic { .. }));
        assert!(matches!(err(&DOC.replace(r#"<Ticket id="T-3"/>"#, r#"<Ticket id="X-1"/>"#)), GatewayError::Semantic { .. }));
        assert!(matches!(err(&DOC.replace(r#"qty="1""#, r#"qty="0""#)), GatewayError::Semantic { .. }));
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        match err("<DispatchList date=\"2013-03-06\" plant=\"P\">\n  <Route id=\"R-1\">\n</DispatchList>") {
            GatewayError::XmlSyntax { line, .. } => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
    }

    fn rec(order: &str, serial: u64, at: u64) -> FinishedGoodsRecord {
        FinishedGoodsRecord {
            product_id: 77,
            serial,
            order: OrderRef::customer(1001),
            order_code: order.into(),
            product_code: "P-77".into(),
            exited_at_us: at,
        }
    }

    #[test]
    fn finished_goods_export_is_canonical() {
        assert_eq!(
            String::from_utf8(export_finished_goods_xml("MOBICA-1", &[])).unwrap(),
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<FinishedGoods plant=\"MOBICA-1\"/>\n"
        );
        let a = vec![rec("SO-1001", 2, 10), rec("SO-1001", 1, 10), rec("SO&1", 1, 5)];
        let mut b = a.clone();
        b.reverse();
        let xa = export_finished_goods_xml("MOBICA-1", &a);
        assert_eq!(xa, export_finished_goods_xml("MOBICA-1", &b));
        let text = String::from_utf8(xa).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], r#"  <Item order="SO&amp;1" product="P-77" serial="1" exitedAt="5"/>"#);
        assert!(lines[3].contains(r#"serial="1""#) && lines[4].contains(r#"serial="2""#));
    }
}
