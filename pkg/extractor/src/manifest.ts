/** Split manifest JSON, matching the reader's schema. */

export interface SplitManifest {
  name: string;
  id_train: number[];
  id_test: number[];
  ood_test: number[];
  class_names?: Record<string, string>;
}

export function manifestJson(manifest: SplitManifest): string {
  const doc: Record<string, unknown> = {
    name: manifest.name,
    id_train: manifest.id_train,
    id_test: manifest.id_test,
    ood_test: manifest.ood_test,
  };
  if (manifest.class_names && Object.keys(manifest.class_names).length > 0) {
    doc.class_names = manifest.class_names;
  }
  return JSON.stringify(doc, null, 2) + '\n';
}
