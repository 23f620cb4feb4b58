export interface Shortcut {
  key: string;
  action: 'accept' | 'reject' | 'toggle-overlay';
  label: string;
}

export const SHORTCUTS: ReadonlyArray<Shortcut> = [
  { key: 'a', action: 'accept', label: 'Accept mask' },
  { key: 'r', action: 'reject', label: 'Reject mask' },
  { key: 'o', action: 'toggle-overlay', label: 'Toggle overlay' }
];

export function actionForKey(key: string): Shortcut['action'] | null {
  const hit = SHORTCUTS.find((s) => s.key === key.toLowerCase());
  return hit ? hit.action : null;
}
