/**
 * Split rules and manifest emission.
 *
 * A rule maps a filename token to a split; the token doubles as the
 * condition tag recorded in the manifest. Defaults follow the usual
 * benchmark discipline: daytime imagery is reference material, adverse
 * conditions are queries. User rules are checked before the defaults so
 * new tags can be added without restating these.
 */

export type Split = 'reference' | 'query';

export type SplitRule = {
  token: string;
  split: Split;
};

export const DEFAULT_RULES: SplitRule[] = [
  { token: 'daytime', split: 'reference' },
  { token: 'day', split: 'reference' },
  { token: 'night', split: 'query' },
  { token: 'snow', split: 'query' },
  { token: 'rain', split: 'query' },
];

/** Parse "fog=query,dusk=reference" into rules, keeping input order. */
export function parseSplitRules(text: string): SplitRule[] {
  const rules: SplitRule[] = [];
  for (const part of text.split(',')) {
    const item = part.trim();
    if (!item) continue;
    const eq = item.indexOf('=');
    if (eq <= 0) throw new Error(`bad split rule '${item}', want token=split`);
    const token = item.slice(0, eq).trim().toLowerCase();
    const split = item.slice(eq + 1).trim();
    if (split !== 'reference' && split !== 'query') {
      throw new Error(`bad split '${split}' in rule '${item}', want reference or query`);
    }
    if (!token) throw new Error(`empty token in rule '${item}'`);
    rules.push({ token, split });
  }
  return rules;
}

export type Assignment = {
  condition: string;
  split: Split;
};

/**
 * First rule whose token occurs in the lowercased basename wins. Files
 * matching nothing become reference material under the manifest's
 * default condition tag, on the view that unlabeled imagery is far more
 * often bulk daytime footage than an adverse-condition query.
 */
export function assignSplit(basename: string, rules: SplitRule[]): Assignment {
  const name = basename.toLowerCase();
  for (const rule of rules) {
    if (name.includes(rule.token)) {
      return { condition: rule.token, split: rule.split };
    }
  }
  return { condition: 'default', split: 'reference' };
}

export type ManifestFragment = {
  imageId: string;
  condition: string;
  split: Split;
  logitsRel: string;
  descriptorRel: string;
};

export type ClassSchema = {
  classNames: string[];
  roadClass: string;
};

export function renderManifest(schema: ClassSchema, fragments: ManifestFragment[]): string {
  const lines = [
    'format_version: 1',
    `classes: ${schema.classNames.join(', ')}`,
    `road_class: ${schema.roadClass}`,
  ];
  for (const frag of fragments) {
    lines.push('');
    lines.push(`[image ${frag.imageId}]`);
    lines.push(`split: ${frag.split}`);
    lines.push(`condition: ${frag.condition}`);
    lines.push(`logits: ${frag.logitsRel}`);
    lines.push(`descriptor: ${frag.descriptorRel}`);
  }
  return lines.join('\n') + '\n';
}
